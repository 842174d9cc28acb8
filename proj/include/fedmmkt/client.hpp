#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedmmkt/linalg.hpp"
#include "fedmmkt/rng.hpp"
#include "fedmmkt/world.hpp"

namespace fedmmkt {

// One simulated client: tanh feature extractor, linear projection head to
// the common representation dim (so heterogeneous hidden dims interoperate),
// linear classifier on top. hidden_dim is the heterogeneity knob.
struct ClientModel {
    int client_id = 0;
    Modality modality = Modality::image;
    Mat extractor;   // hidden_dim x input_dim
    Mat projector;   // rep_dim x hidden_dim
    Mat classifier;  // classes x rep_dim

    std::size_t input_dim() const { return extractor.cols; }
    std::size_t hidden_dim() const { return extractor.rows; }
    std::size_t rep_dim() const { return projector.rows; }
    std::size_t num_classes() const { return classifier.rows; }
};

ClientModel make_client_model(int client_id, Modality modality, int input_dim, int hidden_dim,
                              int rep_dim, int classes, RngStream& rng);

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 1;
    int batch_size = 32;
    double lambda = 1.0;         // retraining trade-off between alignment and label fit
    double kl_temperature = 1.0; // softening temperature for the representation KL
};

// Gradients shaped like the model.
struct ClientGradient {
    Mat extractor;
    Mat projector;
    Mat classifier;
};

ClientGradient zero_gradient(const ClientModel& model);

struct Inference {
    int label = 0;
    double entropy_weight = 0.0;
    Vec representation;
    Vec logits;
    Vec probabilities;
};

// representation = projector * tanh(extractor * x); logits = classifier *
// representation; label = argmax with lowest-index tie-break.
Inference infer(const ClientModel& model, const Vec& feature);

// Post-consensus record a client retrains on.
struct RefinedRecord {
    Vec feature;        // synthetic feature in the client's modality
    int consensus_label = 0;
    Vec fused_rep;      // MR^s; empty in the logit variant
};

// Mean cross-entropy over `examples` and, if grad != nullptr, its gradient.
double pretrain_loss(const ClientModel& model, std::span<const Example> examples,
                     ClientGradient* grad);

// Mean of KL(softmax(R/tau) || softmax(MR/tau)) + lambda * CE(p, Y^s) over
// the records; include_kl = false drops the alignment term (logit variant).
double retrain_loss(const ClientModel& model, std::span<const RefinedRecord> records,
                    double lambda, double kl_temperature, bool include_kl, ClientGradient* grad);

// Minibatch SGD on the local cross-entropy objective. Mutates the model,
// returns the final epoch's mean loss (the current loss when epochs == 0).
double local_train(ClientModel& model, std::span<const Example> examples, const TrainConfig& cfg,
                   RngStream& rng);

// Minibatch SGD on the retraining objective (KL alignment + lambda * CE).
double retrain(ClientModel& model, std::span<const RefinedRecord> records, const TrainConfig& cfg,
               RngStream& rng);

// Cross-entropy-only variant: consensus labels, no representation term.
double retrain_logit(ClientModel& model, std::span<const RefinedRecord> records,
                     const TrainConfig& cfg, RngStream& rng);

struct AugmentParams {
    double mask_rate = 0.2;
    double noise_std = 0.0;
};

// Feature-space augmentation: random coordinate masking then additive noise.
Vec augment_feature(const Vec& feature, const AugmentParams& params, RngStream& rng);

}  // namespace fedmmkt
