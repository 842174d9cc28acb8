#include "fedmmkt/metrics.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

namespace fedmmkt {

int OracleClassifier::classify(const Vec& feature, Modality modality) const {
    const auto& protos =
        modality == Modality::image ? world_->image_prototypes : world_->text_prototypes;
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int c = 0; c < world_->num_classes; ++c) {
        const double d = squared_distance(feature, protos[c]);
        if (d < best_dist) {
            best_dist = d;
            best = c;
        }
    }
    return best;
}

double gan_test_accuracy(const GeneratorModel& gen, const FeatureWorld& world,
                         int samples_per_class, RngStream& rng) {
    if (samples_per_class < 1)
        throw InvalidInputError("gan_test_accuracy: samples_per_class must be positive");
    const OracleClassifier oracle(world);
    long long correct = 0;
    for (int c = 0; c < world.num_classes; ++c) {
        for (int s = 0; s < samples_per_class; ++s) {
            const Vec feature = generate_post_finetune(gen, c, nullptr, rng);
            if (oracle.classify(feature, Modality::image) == c) ++correct;
        }
    }
    return static_cast<double>(correct) /
           static_cast<double>(static_cast<long long>(world.num_classes) * samples_per_class);
}

double client_accuracy(const ClientModel& model, std::span<const Example> heldout) {
    if (heldout.empty()) throw UndefinedMetricError("client_accuracy: empty held-out set");
    long long correct = 0;
    for (const Example& ex : heldout) {
        if (infer(model, ex.feature).label == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(heldout.size());
}

namespace {

bool same_architecture(const std::vector<ClientModel>& clients) {
    for (std::size_t k = 1; k < clients.size(); ++k) {
        if (!clients[k].extractor.same_shape(clients[0].extractor) ||
            !clients[k].projector.same_shape(clients[0].projector) ||
            !clients[k].classifier.same_shape(clients[0].classifier))
            return false;
    }
    return true;
}

Vec flatten_params(const ClientModel& m) {
    Vec out;
    out.reserve(m.extractor.data.size() + m.projector.data.size() + m.classifier.data.size());
    out.insert(out.end(), m.extractor.data.begin(), m.extractor.data.end());
    out.insert(out.end(), m.projector.data.begin(), m.projector.data.end());
    out.insert(out.end(), m.classifier.data.begin(), m.classifier.data.end());
    return out;
}

Vec flatten_gradient(const ClientGradient& g) {
    Vec out;
    out.reserve(g.extractor.data.size() + g.projector.data.size() + g.classifier.data.size());
    out.insert(out.end(), g.extractor.data.begin(), g.extractor.data.end());
    out.insert(out.end(), g.projector.data.begin(), g.projector.data.end());
    out.insert(out.end(), g.classifier.data.begin(), g.classifier.data.end());
    return out;
}

}  // namespace

TheoryEstimates theory_estimates(const std::vector<ClientModel>& clients,
                                 const std::vector<Example>& image_probe,
                                 const std::vector<Example>& text_probe,
                                 const std::vector<std::vector<Vec>>& kept_reps_per_client,
                                 const std::vector<Vec>& fused_reps) {
    TheoryEstimates out;
    if (clients.empty()) return out;

    if (same_architecture(clients)) {
        const std::size_t k = clients.size();
        std::vector<Vec> grads(k);
        for (std::size_t i = 0; i < k; ++i) {
            const auto& probe = clients[i].modality == Modality::image ? image_probe : text_probe;
            ClientGradient g = zero_gradient(clients[i]);
            pretrain_loss(clients[i], probe, &g);
            grads[i] = flatten_gradient(g);
        }
        Vec mean_grad(grads[0].size(), 0.0);
        for (const Vec& g : grads)
            for (std::size_t d = 0; d < g.size(); ++d) mean_grad[d] += g[d];
        for (auto& x : mean_grad) x /= static_cast<double>(k);
        double zeta = 0.0;
        for (const Vec& g : grads) zeta += squared_distance(g, mean_grad);
        out.zeta_sq = zeta / static_cast<double>(k);

        std::vector<Vec> params(k);
        for (std::size_t i = 0; i < k; ++i) params[i] = flatten_params(clients[i]);
        Vec mean_params(params[0].size(), 0.0);
        for (const Vec& p : params)
            for (std::size_t d = 0; d < p.size(); ++d) mean_params[d] += p[d];
        for (auto& x : mean_params) x /= static_cast<double>(k);
        double gamma = 0.0;
        for (const Vec& p : params) gamma += squared_distance(p, mean_params);
        out.gamma_sq = gamma / static_cast<double>(k);
    }

    if (!fused_reps.empty() && !kept_reps_per_client.empty()) {
        double sum = 0.0;
        long long count = 0;
        for (const auto& client_reps : kept_reps_per_client) {
            if (client_reps.size() != fused_reps.size())
                throw InvalidInputError("theory_estimates: rep/fused count mismatch");
            for (std::size_t i = 0; i < fused_reps.size(); ++i) {
                sum += squared_distance(client_reps[i], fused_reps[i]);
                ++count;
            }
        }
        if (count > 0) out.eps_align_sq = sum / static_cast<double>(count);
    }
    return out;
}

MonotonicityResult monotonicity_check(const std::vector<double>& series, double slack,
                                      int max_violations) {
    if (series.size() < 2) throw InvalidInputError("monotonicity_check: series too short");
    MonotonicityResult res;
    for (std::size_t t = 0; t + 1 < series.size(); ++t) {
        if (series[t + 1] > series[t] + slack) ++res.violations;
    }
    res.passed = res.violations <= max_violations;
    return res;
}

std::string RoundMetrics::to_json_line() const {
    nlohmann::ordered_json j;
    j["round"] = round;
    j["client_accuracy"] = client_accuracy;
    if (img_acc)
        j["img_acc"] = *img_acc;
    else
        j["img_acc"] = nullptr;
    if (txt_acc)
        j["txt_acc"] = *txt_acc;
    else
        j["txt_acc"] = nullptr;
    j["t2i_accuracy"] = t2i_accuracy;
    if (labvote_fidelity)
        j["labvote_fidelity"] = *labvote_fidelity;
    else
        j["labvote_fidelity"] = nullptr;
    j["global_loss"] = global_loss;
    j["grad_norm_sq"] = grad_norm_sq;
    if (zeta_sq)
        j["zeta_sq"] = *zeta_sq;
    else
        j["zeta_sq"] = nullptr;
    if (gamma_sq)
        j["gamma_sq"] = *gamma_sq;
    else
        j["gamma_sq"] = nullptr;
    if (eps_align_sq)
        j["eps_align_sq"] = *eps_align_sq;
    else
        j["eps_align_sq"] = nullptr;
    if (kept_fraction)
        j["kept_fraction"] = *kept_fraction;
    else
        j["kept_fraction"] = nullptr;
    return j.dump();
}

}  // namespace fedmmkt
