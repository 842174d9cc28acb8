#include "fedmmkt/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace fedmmkt {

namespace {

// Separation target as a multiple of noise_std. The invariant only needs
// > 4, but nearest-prototype accuracy >= 99% needs more headroom: at 7.5
// the per-pair confusion probability is ~2e-4.
constexpr double kSeparationFactor = 7.5;

double min_pairwise_distance(const std::vector<Vec>& protos) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < protos.size(); ++i) {
        for (std::size_t j = i + 1; j < protos.size(); ++j) {
            best = std::min(best, std::sqrt(squared_distance(protos[i], protos[j])));
        }
    }
    return best;
}

}  // namespace

std::string to_string(Modality m) { return m == Modality::image ? "image" : "text"; }

Modality modality_from_string(const std::string& s) {
    if (s == "image") return Modality::image;
    if (s == "text") return Modality::text;
    throw InvalidInputError("unknown modality: " + s);
}

FeatureWorld build_world(int classes, int image_dim, int text_dim, double corruption_q,
                         double noise_std, std::uint64_t seed) {
    if (classes < 2) throw InvalidInputError("build_world: need at least 2 classes");
    if (image_dim < 2 || text_dim < 2) throw InvalidInputError("build_world: dims must be >= 2");
    if (corruption_q < 0.0 || corruption_q > 1.0)
        throw InvalidInputError("build_world: corruption_q must be in [0,1]");
    if (!(noise_std > 0.0)) throw InvalidInputError("build_world: noise_std must be positive");

    FeatureWorld world;
    world.num_classes = classes;
    world.image_dim = image_dim;
    world.text_dim = text_dim;
    world.noise_std = noise_std;

    RngStream map_rng = RngStream::derive(seed, {kWorldCrossModal});
    world.cross_modal_map = Mat(text_dim, image_dim);
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(image_dim));
    for (auto& x : world.cross_modal_map.data) x = map_rng.normal() * map_scale;

    RngStream proto_rng = RngStream::derive(seed, {kWorldPrototypes});
    world.image_prototypes.resize(classes);
    for (auto& p : world.image_prototypes) {
        p.resize(image_dim);
        for (auto& x : p) x = proto_rng.normal();
    }
    world.text_prototypes.resize(classes);
    for (int c = 0; c < classes; ++c)
        world.text_prototypes[c] = matvec(world.cross_modal_map, world.image_prototypes[c]);

    const double min_dist =
        std::min(min_pairwise_distance(world.image_prototypes),
                 min_pairwise_distance(world.text_prototypes));
    if (!(min_dist > 1e-9))
        throw ConstructionError("build_world: coincident prototypes, separation unattainable");
    const double scale = kSeparationFactor * noise_std / min_dist;
    for (auto& p : world.image_prototypes)
        for (auto& x : p) x *= scale;
    for (auto& p : world.text_prototypes)
        for (auto& x : p) x *= scale;

    // Corruption permutation: displace exactly round(q*C) classes.
    // round(q*C) == 1 cannot form a derangement; snap to the nearest
    // feasible count (0 or 2), staying within 1/C of q.
    int displaced = static_cast<int>(std::lround(corruption_q * classes));
    if (displaced == 1) displaced = (corruption_q * classes < 1.0) ? 0 : 2;

    world.corruption_perm.resize(classes);
    std::iota(world.corruption_perm.begin(), world.corruption_perm.end(), 0);
    if (displaced > 0) {
        RngStream perm_rng = RngStream::derive(seed, {kWorldCorruption});
        std::vector<int> all(classes);
        std::iota(all.begin(), all.end(), 0);
        perm_rng.shuffle(all);
        std::vector<int> subset(all.begin(), all.begin() + displaced);
        std::sort(subset.begin(), subset.end());

        std::vector<int> images = subset;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            perm_rng.shuffle(images);
            ok = true;
            for (int i = 0; i < displaced; ++i) {
                if (images[i] == subset[i]) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok) throw ConstructionError("build_world: derangement sampling failed");
        for (int i = 0; i < displaced; ++i) world.corruption_perm[subset[i]] = images[i];
    }
    return world;
}

Example sample_example(const FeatureWorld& world, int label, Modality modality, RngStream& rng) {
    if (label < 0 || label >= world.num_classes)
        throw InvalidInputError("sample_example: label out of range");
    Example ex;
    ex.label = label;
    ex.modality = modality;
    ex.feature = world.prototype(label, modality);
    for (auto& x : ex.feature) x += rng.normal(0.0, world.noise_std);
    return ex;
}

std::vector<std::vector<std::size_t>> dirichlet_partition(const std::vector<int>& labels, int k,
                                                          double alpha, RngStream& rng) {
    if (k < 1) throw InvalidInputError("dirichlet_partition: need at least one client");
    if (!(alpha > 0.0)) throw InvalidInputError("dirichlet_partition: alpha must be positive");
    std::vector<std::vector<std::size_t>> parts(k);
    if (labels.empty()) return parts;

    int max_label = 0;
    for (int l : labels) {
        if (l < 0) throw InvalidInputError("dirichlet_partition: negative label");
        max_label = std::max(max_label, l);
    }
    std::vector<std::vector<std::size_t>> by_class(max_label + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    for (const auto& indices : by_class) {
        if (indices.empty()) continue;
        const std::size_t n = indices.size();
        const std::vector<double> props = rng.dirichlet(alpha, static_cast<std::size_t>(k));

        // Largest-remainder rounding of n * props into integer counts.
        std::vector<std::size_t> counts(k);
        std::vector<std::pair<double, int>> remainders(k);
        std::size_t assigned = 0;
        for (int c = 0; c < k; ++c) {
            const double share = props[c] * static_cast<double>(n);
            counts[c] = static_cast<std::size_t>(std::floor(share));
            assigned += counts[c];
            remainders[c] = {share - std::floor(share), c};
        }
        std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t r = 0; assigned < n; ++r, ++assigned) counts[remainders[r].second] += 1;

        std::size_t cursor = 0;
        for (int c = 0; c < k; ++c) {
            for (std::size_t j = 0; j < counts[c]; ++j) parts[c].push_back(indices[cursor++]);
        }
    }
    return parts;
}

std::vector<ClientDataset> make_client_datasets(const FeatureWorld& world,
                                                const PartitionSpec& spec, std::uint64_t seed) {
    if (spec.num_clients < 1) throw InvalidInputError("make_client_datasets: need clients");
    if (spec.num_image_clients < 0 || spec.num_image_clients > spec.num_clients)
        throw InvalidInputError("make_client_datasets: image client count out of range");
    if (spec.samples_per_client < 1)
        throw InvalidInputError("make_client_datasets: samples_per_client must be positive");

    const std::size_t total =
        static_cast<std::size_t>(spec.num_clients) * static_cast<std::size_t>(spec.samples_per_client);
    std::vector<int> pool(total);
    for (std::size_t i = 0; i < total; ++i) pool[i] = static_cast<int>(i % world.num_classes);

    RngStream part_rng = RngStream::derive(seed, {kPartition});
    const auto parts = dirichlet_partition(pool, spec.num_clients, spec.dirichlet_alpha, part_rng);

    std::vector<ClientDataset> datasets(spec.num_clients);
    for (int k = 0; k < spec.num_clients; ++k) {
        datasets[k].modality = k < spec.num_image_clients ? Modality::image : Modality::text;
        RngStream rng = RngStream::derive(seed, {kClientData, static_cast<std::uint64_t>(k)});
        datasets[k].examples.reserve(parts[k].size());
        for (std::size_t idx : parts[k])
            datasets[k].examples.push_back(sample_example(world, pool[idx], datasets[k].modality, rng));
    }
    return datasets;
}

std::string datasets_to_json(const std::vector<ClientDataset>& datasets) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& ds : datasets) {
        nlohmann::ordered_json client = nlohmann::ordered_json::array();
        for (const auto& ex : ds.examples) {
            client.push_back({{"feature", ex.feature}, {"label", ex.label}, {"modality", to_string(ex.modality)}});
        }
        out.push_back(std::move(client));
    }
    return out.dump();
}

std::vector<ClientDataset> datasets_from_json(const std::string& text) {
    const auto parsed = nlohmann::json::parse(text);
    std::vector<ClientDataset> datasets;
    for (const auto& client : parsed) {
        ClientDataset ds;
        for (const auto& item : client) {
            Example ex;
            ex.feature = item.at("feature").get<Vec>();
            ex.label = item.at("label").get<int>();
            ex.modality = modality_from_string(item.at("modality").get<std::string>());
            ds.examples.push_back(std::move(ex));
        }
        if (!ds.examples.empty()) ds.modality = ds.examples.front().modality;
        datasets.push_back(std::move(ds));
    }
    return datasets;
}

}  // namespace fedmmkt
