#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedmmkt/linalg.hpp"
#include "fedmmkt/rng.hpp"
#include "fedmmkt/world.hpp"

namespace fedmmkt {

// Toy text-to-image surrogate: a frozen per-class embedding table (encoder)
// and a trainable linear decoder into image-feature space.
struct GeneratorModel {
    Mat encoder;  // classes x rep_dim, orthonormal rows, frozen after init
    Mat decoder;  // image_dim x rep_dim, the trainable component
    double generation_noise = 0.0;

    std::size_t num_classes() const { return encoder.rows; }
    std::size_t rep_dim() const { return encoder.cols; }
    std::size_t image_dim() const { return decoder.rows; }

    Vec embedding(int label) const;
};

// Throws PretrainError if classes > rep_dim (orthonormal embeddings need
// rep_dim >= classes, matching the decoder's least-squares solvability).
GeneratorModel make_generator(int classes, int rep_dim, int image_dim, double generation_noise,
                              std::uint64_t seed);

// Least-squares fit of the decoder so decoder(encoder(y)) hits the image
// prototype of the *corrupted* class pi(y) — the pretrained prior carries
// the world's label bias. Idempotent.
void pretrain_decoder(GeneratorModel& gen, const FeatureWorld& world);

// One server-generated sample and everything LabVote/fusion attach to it.
struct SyntheticRecord {
    int index = 0;
    int prompt_label = 0;
    Vec image_feature;  // I^s
    Vec text_feature;   // T^s
    std::optional<int> consensus_label;   // Y^s, after LabVote
    std::optional<int> vote_count;        // clients agreeing with Y^s
    std::optional<double> vote_mass;      // entropy-weight mass behind Y^s
    std::optional<Vec> fused_rep;         // MR^s, after fusion
};

// I^s = decoder(encoder(y)) + noise; T^s = A * I^s + noise. The text is
// derived from the generated image so mislabeled generations carry
// consistently mislabeled text.
std::pair<Vec, Vec> generate_synthetic(const GeneratorModel& gen, const FeatureWorld& world,
                                       int label, RngStream& rng);

// decoder(MR + e(y)) when a fused representation is given, else decoder(e(y)).
Vec generate_post_finetune(const GeneratorModel& gen, int label, const Vec* fused_rep,
                           RngStream& rng);

struct LabelVote {
    int label = 0;
    double weight = 0.0;  // entropy weight in (0, 1]
};

struct VoteOutcome {
    int consensus_label = 0;
    int vote_count = 0;     // unweighted count of clients predicting the consensus
    double vote_mass = 0.0; // summed entropy weight behind the consensus
};

// Entropy-weighted argmax over classes (lowest-index tie-break). Exactly
// invariant to vote order: per-class weights are sorted before summing.
VoteOutcome lab_vote(std::span<const LabelVote> votes, int num_classes);

// Keep records with votes > floor(beta * K); order preserved. With
// weighted_votes the entropy-weight mass is compared instead of the count.
std::vector<SyntheticRecord> filter_records(const std::vector<SyntheticRecord>& records,
                                            double beta, int num_clients,
                                            bool weighted_votes = false);

struct FusionParams {
    double beta = 0.5;
    CAParams ca;
    int batch_size = 32;
    double p_drop = 0.2;
};

// Inter-modal cross-attention: each client's representation of each record
// attended against the mean representation of the other modality's clients.
// reps[k][i] = client k's representation of record i. Throws
// ModalityAbsentError unless both modalities appear.
std::vector<std::vector<Vec>> intermodal_fuse(const std::vector<std::vector<Vec>>& reps,
                                              const std::vector<Modality>& modalities,
                                              const CAParams& ca);

// Cross-client, cross-modal contrastive scores over one batch of records:
// w[i][k] = cos(own record's other-modality mean) - log sum_{j != i}
// exp(cos(record j's other-modality mean)). Text clients are scored
// symmetrically against image means. Throws ContrastiveDegenerateError for
// batches of fewer than two records.
std::vector<std::vector<double>> contrastive_weights(const std::vector<std::vector<Vec>>& fused,
                                                     const std::vector<Modality>& modalities);

struct FuseResult {
    std::vector<Vec> fused;                  // MR^s per record
    std::vector<std::vector<double>> alpha;  // [record][client], each row sums to 1
};

// alpha = softmax over clients of w per record; MR^s = sum_k alpha_k * rep_k.
FuseResult fuse(const std::vector<std::vector<Vec>>& client_reps,
                const std::vector<std::vector<double>>& weights);

struct FinetuneConfig {
    double p_drop = 0.2;
    int epochs = 1;
    double learning_rate = 2e-4;  // cosine-annealed over the epochs
};

struct FinetuneStats {
    bool skipped_empty = false;
    long long conditioning_draws = 0;  // Bernoulli draws over records with MR
    long long mr_omitted = 0;
    double final_loss = 0.0;
};

// Per-record SGD on the squared reconstruction error of I^s from
// z = MR^s + e(Y^s) (MR omitted with probability p_drop). Only the decoder
// moves; the encoder is never touched.
FinetuneStats finetune_t2i(GeneratorModel& gen, const std::vector<SyntheticRecord>& kept,
                           const FinetuneConfig& cfg, RngStream& rng);

// Mean over records of |decoder * z - target|^2 / image_dim, plus gradient
// w.r.t. the decoder if grad != nullptr. Shared by training and tests.
double decoder_loss(const GeneratorModel& gen, std::span<const Vec> zs,
                    std::span<const Vec> targets, Mat* grad);

}  // namespace fedmmkt
