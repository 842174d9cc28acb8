#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmmkt/linalg.hpp"
#include "fedmmkt/rng.hpp"

namespace fedmmkt {

enum class Modality { image, text };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// Synthetic feature universe standing in for real datasets and pretrained
// backbones: one Gaussian prototype per class in each modality space, a
// linear cross-modal map relating them, and a label-corruption permutation
// describing which classes the (pretrained) generator confuses.
struct FeatureWorld {
    int num_classes = 0;
    int image_dim = 0;
    int text_dim = 0;
    std::vector<Vec> image_prototypes;  // num_classes x image_dim
    std::vector<Vec> text_prototypes;   // num_classes x text_dim
    Mat cross_modal_map;                // text_dim x image_dim; mu_T = A * mu_I
    std::vector<int> corruption_perm;   // bijection over classes
    double noise_std = 0.0;

    const Vec& prototype(int label, Modality m) const {
        return m == Modality::image ? image_prototypes[label] : text_prototypes[label];
    }
    int feature_dim(Modality m) const { return m == Modality::image ? image_dim : text_dim; }
};

struct Example {
    Vec feature;
    int label = 0;
    Modality modality = Modality::image;
};

struct PartitionSpec {
    int num_clients = 0;
    int num_image_clients = 0;
    double dirichlet_alpha = 0.5;
    int samples_per_client = 0;
};

struct ClientDataset {
    Modality modality = Modality::image;
    std::vector<Example> examples;
};

// Builds the world: seeded prototypes rescaled so the minimum pairwise
// prototype distance (in both spaces) comfortably exceeds 4*noise_std, and
// a corruption permutation displacing round(corruption_q * classes) classes
// via a seeded derangement on that subset.
FeatureWorld build_world(int classes, int image_dim, int text_dim, double corruption_q,
                         double noise_std, std::uint64_t seed);

// Prototype of `label` in `modality` plus per-coordinate Gaussian noise.
Example sample_example(const FeatureWorld& world, int label, Modality modality, RngStream& rng);

// Per class, draws proportions from Dirichlet(alpha, K) and splits that
// class's indices by largest-remainder rounding. The K lists partition the
// input exactly.
std::vector<std::vector<std::size_t>> dirichlet_partition(const std::vector<int>& labels, int k,
                                                          double alpha, RngStream& rng);

// K datasets: the first num_image_clients get image features, the rest
// text; label distributions follow dirichlet_partition over a balanced
// global pool of num_clients * samples_per_client labels.
std::vector<ClientDataset> make_client_datasets(const FeatureWorld& world,
                                                const PartitionSpec& spec, std::uint64_t seed);

// Debug dump/load of datasets as JSON arrays of {feature, label, modality}.
std::string datasets_to_json(const std::vector<ClientDataset>& datasets);
std::vector<ClientDataset> datasets_from_json(const std::string& text);

}  // namespace fedmmkt
