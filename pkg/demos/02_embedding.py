"""Turn scene graphs into model inputs: binary node encoding, PCA
compression, and tau-thresholded geometric edges.

Run: python3 demos/02_embedding.py
"""

import numpy as np

from vsg import (
    EdgeConfig,
    GeneratorConfig,
    default_taxonomy,
    embed,
    encode_nodes,
    fit_pca,
    generate_environment,
    pairwise_distance_percentile,
    transform_pca,
)


def main():
    tax = default_taxonomy()
    cfg = GeneratorConfig(num_environments=4, scans_per_environment=3, seed=21)
    scans = []
    for e in range(cfg.num_environments):
        scans.extend(generate_environment(cfg, e, tax)[0])
    print(f"{len(scans)} scans from {cfg.num_environments} environments")

    # Each node becomes a one-hot class block plus a multi-hot attribute
    # block; PCA then compresses the stack to d_v dimensions.
    vectors = np.vstack([encode_nodes(g, tax) for g in scans])
    full_dim = vectors.shape[1]
    print(f"binary encoding: {vectors.shape[0]} nodes x {full_dim} dims "
          f"({tax.num_classes} classes + {tax.num_attributes} attributes)")
    pca = fit_pca(vectors, d_v=16)
    retained = float(pca.explained_variance_ratio.sum())
    print(f"PCA 16/{full_dim} dims retains {retained:.1%} of the variance "
          f"(rank {pca.rank})")
    z = transform_pca(pca, vectors[:3])
    print("first compressed node:", np.round(z[0, :5], 3), "...")

    # tau controls geometric edge density; the percentile helper picks it
    # from the scale of the data instead of a hand guess.
    g = scans[0]
    for label, tau in [
        ("p25", pairwise_distance_percentile(scans, 25.0)),
        ("p50", pairwise_distance_percentile(scans, 50.0)),
        ("2.0 m", 2.0),
    ]:
        eg = embed(g, tax, pca, EdgeConfig(tau=tau))
        print(f"tau {label} ({tau:.2f} m): {eg.edge_index.shape[0]} directed edges "
              f"on {g.num_nodes} nodes")

    # Semantic edges ride along as relation one-hots in the edge features:
    # [relation flags | dx dy dz].
    eg = embed(g, tax, pca, EdgeConfig(tau=2.0))
    print(f"edge feature width: {eg.edge_features.shape[1]} "
          f"({tax.num_relationships} relations + 3 offsets)")


if __name__ == "__main__":
    main()
