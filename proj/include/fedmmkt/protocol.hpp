#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedmmkt/client.hpp"
#include "fedmmkt/metrics.hpp"
#include "fedmmkt/server.hpp"
#include "fedmmkt/world.hpp"

namespace fedmmkt {

enum class Variant { representation, logit, unimodal };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Configuration (parsed and validated by the config module).
// ---------------------------------------------------------------------------

struct WorldConfig {
    int classes = 10;
    int image_dim = 16;
    int text_dim = 16;
    double corruption_q = 0.0;
    double noise_std = 0.5;
    double generation_noise = 0.02;
};

struct DataConfig {
    double dirichlet_alpha = 0.5;
    int samples_per_client = 250;
    int heldout_per_class = 20;
};

struct ModelConfig {
    int rep_dim = 32;
    std::vector<int> hidden_dims;  // one per client after normalization
};

struct ServerTrainConfig {
    double learning_rate = 2e-4;  // initial rate, cosine-annealed (Adam replaced by SGD at desk scale)
    int server_epochs = 5;        // E_s
    int client_epochs = 2;        // E_c
};

struct FusionConfig {
    double beta = 0.5;
    double p_drop = 0.2;
    int contrastive_batch = 25;
    int ca_tokens = 4;
    bool weighted_votes = false;  // compare entropy mass instead of raw agreement count
};

struct CommConfig {
    std::uint64_t float_bytes = 4;   // B
    std::uint64_t image_bytes = 12288;  // S_I, serialized synthetic image size
    std::uint64_t text_bytes = 256;     // S_T, serialized synthetic text size
};

struct ProtocolConfig {
    int rounds = 5;
    int clients = 4;
    int image_clients = 2;
    int synthetic_per_round = 50;
    Variant variant = Variant::representation;
    std::uint64_t seed = 1;
    WorldConfig world;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    ServerTrainConfig server;
    FusionConfig fusion;
    CommConfig comm;
};

// ---------------------------------------------------------------------------
// Communication accounting. Byte counts are logical and analytic: they come
// from the config constants, never from in-memory layout.
// ---------------------------------------------------------------------------

struct RoundMessage {
    enum class Direction { up, down };
    enum class Kind { synthetic_batch, report_batch, refined_batch };
    Direction direction;
    Kind kind;
    std::uint64_t logical_bytes;
};

struct LedgerRow {
    int round = 0;
    std::uint64_t upload_bytes = 0;
    std::uint64_t download_bytes = 0;
};

class CommLedger {
public:
    void add(const RoundMessage& msg);
    void close_round(int round);

    const std::vector<LedgerRow>& rows() const { return rows_; }
    std::uint64_t total_upload() const { return total_up_; }
    std::uint64_t total_download() const { return total_down_; }
    std::string to_csv() const;

private:
    std::uint64_t pending_up_ = 0;
    std::uint64_t pending_down_ = 0;
    std::uint64_t total_up_ = 0;
    std::uint64_t total_down_ = 0;
    std::vector<LedgerRow> rows_;
};

struct CommCost {
    std::uint64_t upload_bytes = 0;
    std::uint64_t download_bytes = 0;
};

// Closed-form per-round cost for a variant from the config constants.
CommCost comm_cost(const ProtocolConfig& cfg, Variant variant);

// Mebibyte display matching the reference table: bytes / 2^20 rounded
// half-up at 3 decimals, then truncated to 2.
std::string format_mb(std::uint64_t bytes);

// Plain-text cost table (used verbatim by the CLI).
std::string render_comm_cost_table(const ProtocolConfig& cfg);

// ---------------------------------------------------------------------------
// Variant-specific aggregation primitives.
// ---------------------------------------------------------------------------

struct LogitAggregation {
    std::vector<Vec> consensus_logits;        // per record
    std::vector<int> consensus_labels;        // argmax, lowest-index tie-break
    std::vector<std::vector<double>> alpha;   // [record][client]
};

// Logit-level aggregation over one batch of records: contrastive weights
// over logits against the other modality's mean, softmax, weighted sum,
// argmax. Throws ContrastiveDegenerateError for batches < 2.
LogitAggregation aggregate_logits(const std::vector<std::vector<Vec>>& logits_by_client,
                                  const std::vector<Modality>& modalities);

// Unimodal contrastive scores over one batch: each client's representation
// of record i against its own augmented-view representations; w[i][k].
std::vector<std::vector<double>> unimodal_weights(
    const std::vector<std::vector<Vec>>& reps_by_client,
    const std::vector<std::vector<Vec>>& augmented_by_client);

// ---------------------------------------------------------------------------
// Orchestrator.
// ---------------------------------------------------------------------------

struct RoundTraceRecord {
    int index = 0;
    int prompt_label = 0;
    int oracle_label = 0;
    std::optional<int> consensus_label;
    std::optional<int> vote_count;
    bool kept = false;
};

struct ExperimentResult {
    std::vector<RoundMetrics> metrics;  // round 0 (baseline) .. rounds
    std::vector<LedgerRow> ledger;
    std::vector<std::vector<RoundTraceRecord>> trace;  // one entry per protocol round
    std::string metrics_jsonl() const;
    std::string ledger_csv() const;
};

// Drives Algorithm 1: pretraining once, then `rounds` rounds of generate ->
// infer -> vote/aggregate -> fuse -> fine-tune -> retrain, metering every
// transfer. Deterministic given the config (master seed included).
class Experiment {
public:
    explicit Experiment(ProtocolConfig cfg);

    void pretrain_clients();
    void run_round();  // requires pretrain_clients() first

    ExperimentResult finish();  // collects metrics + ledger

    const FeatureWorld& world() const { return world_; }
    const GeneratorModel& generator() const { return generator_; }
    const std::vector<ClientModel>& clients() const { return clients_; }
    const std::vector<ClientDataset>& datasets() const { return datasets_; }
    const CommLedger& ledger() const { return ledger_; }
    const std::vector<RoundMetrics>& metrics() const { return metrics_; }
    int current_round() const { return round_; }

private:
    RoundMetrics compute_round_metrics(int round, const std::vector<SyntheticRecord>& kept,
                                       const std::vector<std::vector<Vec>>& kept_reps,
                                       const std::vector<Vec>& kept_fused, bool have_alignment);

    ProtocolConfig cfg_;
    FeatureWorld world_;
    GeneratorModel generator_;
    CAParams ca_;
    std::vector<ClientDataset> datasets_;
    std::vector<ClientModel> clients_;
    std::vector<Example> heldout_image_;
    std::vector<Example> heldout_text_;
    std::vector<Example> probe_image_;
    std::vector<Example> probe_text_;
    CommLedger ledger_;
    std::vector<RoundMetrics> metrics_;
    std::vector<std::vector<RoundTraceRecord>> trace_;
    int round_ = 0;
    bool pretrained_ = false;
};

// Full experiment: pretrain, run all rounds, return per-round metrics,
// ledger and trace. Pure function of the config.
ExperimentResult run_experiment(const ProtocolConfig& cfg);

// Runs and writes metrics.jsonl, ledger.csv and (optionally) trace/ into
// out_dir. Returns the result for further inspection.
ExperimentResult run_experiment_to_dir(const ProtocolConfig& cfg,
                                       const std::filesystem::path& out_dir, bool dump_trace);

}  // namespace fedmmkt
