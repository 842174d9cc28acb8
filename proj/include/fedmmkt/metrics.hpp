#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmmkt/client.hpp"
#include "fedmmkt/server.hpp"
#include "fedmmkt/world.hpp"

namespace fedmmkt {

// Nearest-prototype classifier over the world's ground-truth prototypes;
// the GAN-test stand-in.
class OracleClassifier {
public:
    explicit OracleClassifier(const FeatureWorld& world) : world_(&world) {}

    int classify(const Vec& feature, Modality modality) const;

private:
    const FeatureWorld* world_;
};

// Generates samples_per_class features per class (no fused conditioning)
// and reports the fraction the oracle assigns to the prompt class.
double gan_test_accuracy(const GeneratorModel& gen, const FeatureWorld& world,
                         int samples_per_class, RngStream& rng);

// Fraction of correct argmax predictions on held-out examples.
double client_accuracy(const ClientModel& model, std::span<const Example> heldout);

struct TheoryEstimates {
    std::optional<double> zeta_sq;      // cross-client gradient variance
    std::optional<double> gamma_sq;     // client parameter drift from the mean
    std::optional<double> eps_align_sq; // representation-to-fused alignment error
};

// zeta/gamma need a common parameter space, so they are reported only when
// every client has identical layer shapes; eps_align is the mean squared
// distance between uploaded representations and the fused MR^s over kept
// records (absent when no fusion happened, e.g. the logit variant).
TheoryEstimates theory_estimates(const std::vector<ClientModel>& clients,
                                 const std::vector<Example>& image_probe,
                                 const std::vector<Example>& text_probe,
                                 const std::vector<std::vector<Vec>>& kept_reps_per_client,
                                 const std::vector<Vec>& fused_reps);

struct MonotonicityResult {
    int violations = 0;
    bool passed = false;
};

// Counts transitions where series[t+1] > series[t] + slack; passes when the
// count stays within max_violations.
MonotonicityResult monotonicity_check(const std::vector<double>& series, double slack,
                                      int max_violations);

// Everything emitted per round; round 0 is the post-pretraining baseline
// (no synthetic exchange yet, so the LabVote/fusion fields are absent).
struct RoundMetrics {
    int round = 0;
    std::vector<double> client_accuracy;
    std::optional<double> img_acc;
    std::optional<double> txt_acc;
    double t2i_accuracy = 0.0;
    std::optional<double> labvote_fidelity;
    double global_loss = 0.0;
    double grad_norm_sq = 0.0;
    std::optional<double> zeta_sq;
    std::optional<double> gamma_sq;
    std::optional<double> eps_align_sq;
    std::optional<double> kept_fraction;

    std::string to_json_line() const;
};

}  // namespace fedmmkt
