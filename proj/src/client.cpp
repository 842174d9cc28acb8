#include "fedmmkt/client.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedmmkt {

namespace {

void xavier_init(Mat& m, RngStream& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(m.cols));
    for (auto& x : m.data) x = rng.normal() * scale;
}

struct Forward {
    Vec hidden;          // tanh(extractor * x)
    Vec representation;  // projector * hidden
    Vec logits;          // classifier * representation
    Vec probs;
};

Forward forward(const ClientModel& model, const Vec& x) {
    if (x.size() != model.input_dim())
        throw InvalidInputError("client forward: feature dim does not match model input dim");
    Forward f;
    f.hidden = matvec(model.extractor, x);
    for (auto& h : f.hidden) h = std::tanh(h);
    f.representation = matvec(model.projector, f.hidden);
    f.logits = matvec(model.classifier, f.representation);
    f.probs = softmax(f.logits).entries();
    return f;
}

// Backprop from d(loss)/d(logits) and d(loss)/d(representation) down to the
// three weight matrices. d_rep_extra is the gradient reaching the
// representation from paths other than the classifier (the KL term).
void backprop(const ClientModel& model, const Vec& x, const Forward& f, const Vec& d_logits,
              const Vec& d_rep_extra, ClientGradient& grad) {
    Vec d_rep = d_rep_extra.empty() ? Vec(model.rep_dim(), 0.0) : d_rep_extra;
    if (!d_logits.empty()) {
        add_outer(grad.classifier, 1.0, d_logits, f.representation);
        const Vec from_classifier = matvec_transposed(model.classifier, d_logits);
        for (std::size_t i = 0; i < d_rep.size(); ++i) d_rep[i] += from_classifier[i];
    }
    add_outer(grad.projector, 1.0, d_rep, f.hidden);
    Vec d_hidden = matvec_transposed(model.projector, d_rep);
    for (std::size_t i = 0; i < d_hidden.size(); ++i)
        d_hidden[i] *= 1.0 - f.hidden[i] * f.hidden[i];
    add_outer(grad.extractor, 1.0, d_hidden, x);
}

void sgd_step(ClientModel& model, const ClientGradient& grad, double lr) {
    add_scaled(model.extractor, -lr, grad.extractor);
    add_scaled(model.projector, -lr, grad.projector);
    add_scaled(model.classifier, -lr, grad.classifier);
}

void scale_gradient(ClientGradient& grad, double s) {
    for (auto& x : grad.extractor.data) x *= s;
    for (auto& x : grad.projector.data) x *= s;
    for (auto& x : grad.classifier.data) x *= s;
}

// Shared minibatch SGD driver; loss_grad evaluates mean loss and gradient
// over an index subset.
template <class LossGrad>
double run_sgd(ClientModel& model, std::size_t n, const TrainConfig& cfg, RngStream& rng,
               LossGrad&& loss_grad) {
    if (n == 0) return 0.0;
    if (cfg.epochs == 0) return loss_grad(model, std::vector<std::size_t>{}, nullptr);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size));

    double epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double sum_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(n, start + batch);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            ClientGradient grad = zero_gradient(model);
            try {
                sum_loss += loss_grad(model, idx, &grad);
            } catch (const InvalidInputError&) {
                // Inputs were validated before training started, so a
                // non-finite forward pass here means the weights blew up.
                throw TrainingDivergedError(epoch);
            }
            sgd_step(model, grad, cfg.learning_rate);
            ++batches;
        }
        epoch_loss = sum_loss / static_cast<double>(batches);
        if (!std::isfinite(epoch_loss)) throw TrainingDivergedError(epoch);
    }
    return epoch_loss;
}

}  // namespace

ClientModel make_client_model(int client_id, Modality modality, int input_dim, int hidden_dim,
                              int rep_dim, int classes, RngStream& rng) {
    if (input_dim < 1 || hidden_dim < 1 || rep_dim < 1 || classes < 2)
        throw InvalidInputError("make_client_model: bad dimensions");
    ClientModel m;
    m.client_id = client_id;
    m.modality = modality;
    m.extractor = Mat(hidden_dim, input_dim);
    m.projector = Mat(rep_dim, hidden_dim);
    m.classifier = Mat(classes, rep_dim);
    xavier_init(m.extractor, rng);
    xavier_init(m.projector, rng);
    xavier_init(m.classifier, rng);
    return m;
}

ClientGradient zero_gradient(const ClientModel& model) {
    ClientGradient g;
    g.extractor = Mat(model.extractor.rows, model.extractor.cols);
    g.projector = Mat(model.projector.rows, model.projector.cols);
    g.classifier = Mat(model.classifier.rows, model.classifier.cols);
    return g;
}

Inference infer(const ClientModel& model, const Vec& feature) {
    const Forward f = forward(model, feature);
    Inference out;
    out.representation = f.representation;
    out.logits = f.logits;
    out.probabilities = f.probs;
    out.label = 0;
    for (std::size_t i = 1; i < f.probs.size(); ++i) {
        if (f.probs[i] > f.probs[out.label]) out.label = static_cast<int>(i);
    }
    out.entropy_weight = entropy_weight(ProbVec(f.probs));
    return out;
}

double pretrain_loss(const ClientModel& model, std::span<const Example> examples,
                     ClientGradient* grad) {
    if (examples.empty()) return 0.0;
    double total = 0.0;
    for (const Example& ex : examples) {
        const Forward f = forward(model, ex.feature);
        total += cross_entropy(ProbVec(f.probs), static_cast<std::size_t>(ex.label));
        if (grad) {
            Vec d_logits = f.probs;
            d_logits[ex.label] -= 1.0;
            backprop(model, ex.feature, f, d_logits, {}, *grad);
        }
    }
    const double inv = 1.0 / static_cast<double>(examples.size());
    if (grad) scale_gradient(*grad, inv);
    return total * inv;
}

double retrain_loss(const ClientModel& model, std::span<const RefinedRecord> records,
                    double lambda, double kl_temperature, bool include_kl, ClientGradient* grad) {
    if (records.empty()) return 0.0;
    const double tau = kl_temperature;
    double total = 0.0;
    for (const RefinedRecord& rec : records) {
        const Forward f = forward(model, rec.feature);
        Vec d_logits(f.logits.size(), 0.0);
        Vec d_rep;

        if (lambda > 0.0 || !include_kl) {
            const double weight = include_kl ? lambda : 1.0;
            total += weight * cross_entropy(ProbVec(f.probs),
                                            static_cast<std::size_t>(rec.consensus_label));
            for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits[i] = weight * f.probs[i];
            d_logits[rec.consensus_label] -= weight;
        }

        if (include_kl) {
            if (rec.fused_rep.size() != f.representation.size())
                throw InvalidInputError("retrain: fused representation dim mismatch");
            const ProbVec a = softmax(f.representation, tau);
            const ProbVec b = softmax(rec.fused_rep, tau);
            const double kl = kl_divergence(a, b);
            total += kl;
            // dKL/dR_m = (1/tau) * a_m * ((log a_m - log b_m) - KL)
            d_rep.assign(f.representation.size(), 0.0);
            for (std::size_t m = 0; m < d_rep.size(); ++m) {
                const double la = std::log(std::max(a[m], 1e-300));
                const double lb = std::log(std::max(b[m], 1e-300));
                d_rep[m] = a[m] * ((la - lb) - kl) / tau;
            }
        }

        if (grad) backprop(model, rec.feature, f, d_logits, d_rep, *grad);
    }
    const double inv = 1.0 / static_cast<double>(records.size());
    if (grad) scale_gradient(*grad, inv);
    return total * inv;
}

double local_train(ClientModel& model, std::span<const Example> examples, const TrainConfig& cfg,
                   RngStream& rng) {
    for (const Example& ex : examples) {
        if (ex.modality != model.modality)
            throw InvalidInputError("local_train: dataset modality does not match model");
        if (ex.feature.size() != model.input_dim())
            throw InvalidInputError("local_train: feature dim does not match model input dim");
    }
    return run_sgd(model, examples.size(), cfg, rng,
                   [&](const ClientModel& m, const std::vector<std::size_t>& idx,
                       ClientGradient* grad) {
                       if (!grad) return pretrain_loss(m, examples, nullptr);
                       std::vector<Example> batch;
                       batch.reserve(idx.size());
                       for (std::size_t i : idx) batch.push_back(examples[i]);
                       return pretrain_loss(m, batch, grad);
                   });
}

namespace {

void validate_refined(const ClientModel& model, std::span<const RefinedRecord> records,
                      bool need_fused) {
    for (const RefinedRecord& rec : records) {
        if (rec.feature.size() != model.input_dim())
            throw InvalidInputError("retrain: feature dim does not match model input dim");
        if (need_fused && rec.fused_rep.size() != model.rep_dim())
            throw InvalidInputError("retrain: fused representation dim mismatch");
    }
}

}  // namespace

double retrain(ClientModel& model, std::span<const RefinedRecord> records, const TrainConfig& cfg,
               RngStream& rng) {
    validate_refined(model, records, true);
    return run_sgd(model, records.size(), cfg, rng,
                   [&](const ClientModel& m, const std::vector<std::size_t>& idx,
                       ClientGradient* grad) {
                       if (!grad)
                           return retrain_loss(m, records, cfg.lambda, cfg.kl_temperature, true,
                                               nullptr);
                       std::vector<RefinedRecord> batch;
                       batch.reserve(idx.size());
                       for (std::size_t i : idx) batch.push_back(records[i]);
                       return retrain_loss(m, batch, cfg.lambda, cfg.kl_temperature, true, grad);
                   });
}

double retrain_logit(ClientModel& model, std::span<const RefinedRecord> records,
                     const TrainConfig& cfg, RngStream& rng) {
    validate_refined(model, records, false);
    return run_sgd(model, records.size(), cfg, rng,
                   [&](const ClientModel& m, const std::vector<std::size_t>& idx,
                       ClientGradient* grad) {
                       if (!grad)
                           return retrain_loss(m, records, cfg.lambda, cfg.kl_temperature, false,
                                               nullptr);
                       std::vector<RefinedRecord> batch;
                       batch.reserve(idx.size());
                       for (std::size_t i : idx) batch.push_back(records[i]);
                       return retrain_loss(m, batch, cfg.lambda, cfg.kl_temperature, false, grad);
                   });
}

Vec augment_feature(const Vec& feature, const AugmentParams& params, RngStream& rng) {
    Vec out = feature;
    for (auto& x : out) {
        if (params.mask_rate > 0.0 && rng.bernoulli(params.mask_rate)) x = 0.0;
        if (params.noise_std > 0.0) x += rng.normal(0.0, params.noise_std);
    }
    return out;
}

}  // namespace fedmmkt
