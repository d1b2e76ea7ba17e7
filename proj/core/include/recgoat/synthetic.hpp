#pragma once

#include <cstdint>
#include <vector>

#include "recgoat/feature_matrix.hpp"
#include "recgoat/interactions.hpp"

namespace recgoat {

// Latent cluster preference model. Items belong to clusters round-robin;
// users carry a latent preferred cluster and draw most interactions from it.
// Item text/visual features are cluster centroids plus noise; visual features
// are rotated by conflict_rotation_deg to emulate semantic heterogeneity
// between the modality spaces. User text features derive from the centroids
// of interacted items.
struct SyntheticConfig {
    int n_users = 200;
    int n_items = 100;
    int n_clusters = 5;
    int d_text = 32;
    int d_visual = 32;
    int interactions_per_user = 15;
    double modality_noise = 0.1;        // feature noise scale; also the off-cluster interaction probability
    double conflict_rotation_deg = 0.0; // rotation of the visual space, degrees

    void validate() const;
};

struct SyntheticData {
    InteractionTable interactions;
    FeatureMatrix item_text;
    FeatureMatrix item_visual;
    FeatureMatrix user_text;
    std::vector<int> item_cluster;  // latent labels, for diagnostics and tests
    std::vector<int> user_cluster;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace recgoat
