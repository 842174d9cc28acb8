#include "fedmmkt/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fedmmkt {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::representation: return "representation";
        case Variant::logit: return "logit";
        case Variant::unimodal: return "unimodal";
    }
    throw InvalidInputError("unknown variant");
}

Variant variant_from_string(const std::string& s) {
    if (s == "representation" || s == "rep") return Variant::representation;
    if (s == "logit") return Variant::logit;
    if (s == "unimodal" || s == "uni") return Variant::unimodal;
    throw ConfigError("unknown variant: " + s + " (expected representation|logit|unimodal)");
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

void CommLedger::add(const RoundMessage& msg) {
    if (msg.direction == RoundMessage::Direction::up)
        pending_up_ += msg.logical_bytes;
    else
        pending_down_ += msg.logical_bytes;
}

void CommLedger::close_round(int round) {
    rows_.push_back({round, pending_up_, pending_down_});
    total_up_ += pending_up_;
    total_down_ += pending_down_;
    pending_up_ = 0;
    pending_down_ = 0;
}

std::string CommLedger::to_csv() const {
    std::ostringstream out;
    out << "round,upload_bytes,download_bytes\n";
    for (const auto& row : rows_)
        out << row.round << ',' << row.upload_bytes << ',' << row.download_bytes << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Cost formulas and display
// ---------------------------------------------------------------------------

CommCost comm_cost(const ProtocolConfig& cfg, Variant variant) {
    const std::uint64_t D = static_cast<std::uint64_t>(cfg.synthetic_per_round);
    const std::uint64_t K = static_cast<std::uint64_t>(cfg.clients);
    const std::uint64_t N = static_cast<std::uint64_t>(cfg.image_clients);
    const std::uint64_t B = cfg.comm.float_bytes;
    const std::uint64_t C = static_cast<std::uint64_t>(cfg.world.classes);
    const std::uint64_t d = static_cast<std::uint64_t>(cfg.model.rep_dim);
    const std::uint64_t SI = cfg.comm.image_bytes;
    const std::uint64_t ST = cfg.comm.text_bytes;

    CommCost cost;
    switch (variant) {
        case Variant::representation:
            cost.upload_bytes = D * K * B * (d + 2);
            cost.download_bytes = D * SI * N + D * ST * (K - N) + D * K * B * (d + 1);
            break;
        case Variant::logit:
            cost.upload_bytes = D * K * B * C;
            cost.download_bytes = D * SI * N + D * ST * (K - N) + D * K * B;
            break;
        case Variant::unimodal: {
            if (N != 0 && N != K)
                throw InvalidInputError("comm_cost: unimodal needs all clients on one modality");
            const std::uint64_t S = (N == K) ? SI : ST;
            // Label + entropy weight + original and augmented-view reps up;
            // single-modality synthetic payload plus (Y^s, MR^s) down.
            cost.upload_bytes = D * K * B * (2 * d + 2);
            cost.download_bytes = D * S * K + D * K * B * (d + 1);
            break;
        }
    }
    return cost;
}

std::string format_mb(std::uint64_t bytes) {
    const double mb = static_cast<double>(bytes) / static_cast<double>(1ULL << 20);
    const auto thousandths = static_cast<unsigned long long>(std::floor(mb * 1000.0 + 0.5));
    const unsigned long long hundredths = thousandths / 10;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%llu.%02llu", hundredths / 100, hundredths % 100);
    return buf;
}

std::string render_comm_cost_table(const ProtocolConfig& cfg) {
    std::ostringstream out;
    out << "variant        upload_bytes  upload_mb  download_bytes  download_mb\n";
    const auto row = [&out](const std::string& name, const CommCost& c) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-13s %13llu %10s %15llu %12s\n", name.c_str(),
                      static_cast<unsigned long long>(c.upload_bytes), format_mb(c.upload_bytes).c_str(),
                      static_cast<unsigned long long>(c.download_bytes),
                      format_mb(c.download_bytes).c_str());
        out << line;
    };
    row("fedmmkt", comm_cost(cfg, Variant::representation));
    row("l-fedmmkt", comm_cost(cfg, Variant::logit));
    if (cfg.image_clients == 0 || cfg.image_clients == cfg.clients)
        row("u-fedmmkt", comm_cost(cfg, Variant::unimodal));
    return out.str();
}

// ---------------------------------------------------------------------------
// Variant aggregation primitives
// ---------------------------------------------------------------------------

namespace {

// Contrastive batches: [start, end) ranges of at least two records; a
// trailing singleton is merged into the previous batch.
std::vector<std::pair<std::size_t, std::size_t>> make_batches(std::size_t n, std::size_t batch) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (n == 0) return out;
    batch = std::max<std::size_t>(2, batch);
    std::size_t start = 0;
    while (start < n) {
        std::size_t end = std::min(n, start + batch);
        if (n - end == 1) end = n;  // absorb what would become a singleton
        out.push_back({start, end});
        start = end;
    }
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out[out.size() - 2].second = out.back().second;
        out.pop_back();
    }
    return out;
}

int argmax_lowest(const Vec& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = static_cast<int>(i);
    }
    return best;
}

}  // namespace

LogitAggregation aggregate_logits(const std::vector<std::vector<Vec>>& logits_by_client,
                                  const std::vector<Modality>& modalities) {
    const std::size_t clients = logits_by_client.size();
    if (clients == 0 || modalities.size() != clients)
        throw InvalidInputError("aggregate_logits: bad inputs");
    const std::size_t batch = logits_by_client[0].size();
    if (batch < 2)
        throw ContrastiveDegenerateError("aggregate_logits: batch must have >= 2 records");
    std::size_t images = 0;
    for (Modality m : modalities)
        if (m == Modality::image) ++images;
    if (images == 0 || images == clients)
        throw ModalityAbsentError("aggregate_logits: both modalities required");

    const std::size_t dim = logits_by_client[0][0].size();
    std::vector<Vec> image_mean(batch, Vec(dim, 0.0)), text_mean(batch, Vec(dim, 0.0));
    for (std::size_t k = 0; k < clients; ++k) {
        if (logits_by_client[k].size() != batch)
            throw InvalidInputError("aggregate_logits: ragged record counts");
        auto& acc = modalities[k] == Modality::image ? image_mean : text_mean;
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t d = 0; d < dim; ++d) acc[i][d] += logits_by_client[k][i][d];
    }
    for (std::size_t i = 0; i < batch; ++i) {
        for (auto& x : image_mean[i]) x /= static_cast<double>(images);
        for (auto& x : text_mean[i]) x /= static_cast<double>(clients - images);
    }

    std::vector<std::vector<double>> w(batch, std::vector<double>(clients, 0.0));
    for (std::size_t k = 0; k < clients; ++k) {
        const auto& other = modalities[k] == Modality::image ? text_mean : image_mean;
        for (std::size_t i = 0; i < batch; ++i) {
            const double own = cosine(logits_by_client[k][i], other[i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < batch; ++j) {
                if (j == i) continue;
                denom += std::exp(cosine(logits_by_client[k][i], other[j]));
            }
            w[i][k] = own - std::log(denom);
        }
    }

    LogitAggregation out;
    out.consensus_logits.resize(batch);
    out.consensus_labels.resize(batch);
    out.alpha.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        out.alpha[i] = softmax(w[i]).entries();
        Vec combined(dim, 0.0);
        for (std::size_t k = 0; k < clients; ++k) {
            const double a = out.alpha[i][k];
            for (std::size_t d = 0; d < dim; ++d) combined[d] += a * logits_by_client[k][i][d];
        }
        out.consensus_labels[i] = argmax_lowest(combined);
        out.consensus_logits[i] = std::move(combined);
    }
    return out;
}

std::vector<std::vector<double>> unimodal_weights(
    const std::vector<std::vector<Vec>>& reps_by_client,
    const std::vector<std::vector<Vec>>& augmented_by_client) {
    const std::size_t clients = reps_by_client.size();
    if (clients == 0 || augmented_by_client.size() != clients)
        throw InvalidInputError("unimodal_weights: bad inputs");
    const std::size_t batch = reps_by_client[0].size();
    if (batch < 2)
        throw ContrastiveDegenerateError("unimodal_weights: batch must have >= 2 records");

    std::vector<std::vector<double>> w(batch, std::vector<double>(clients, 0.0));
    for (std::size_t k = 0; k < clients; ++k) {
        if (reps_by_client[k].size() != batch || augmented_by_client[k].size() != batch)
            throw InvalidInputError("unimodal_weights: ragged record counts");
        for (std::size_t i = 0; i < batch; ++i) {
            const double own = cosine(reps_by_client[k][i], augmented_by_client[k][i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < batch; ++j) {
                if (j == i) continue;
                denom += std::exp(cosine(reps_by_client[k][i], augmented_by_client[k][j]));
            }
            w[i][k] = own - std::log(denom);
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

Experiment::Experiment(ProtocolConfig cfg) : cfg_(std::move(cfg)) {
    const auto& w = cfg_.world;
    if (cfg_.variant == Variant::unimodal) {
        if (cfg_.image_clients != 0 && cfg_.image_clients != cfg_.clients)
            throw ConfigError("unimodal variant requires image_clients == 0 or == clients");
    } else {
        if (cfg_.image_clients < 1 || cfg_.image_clients >= cfg_.clients)
            throw ConfigError(to_string(cfg_.variant) +
                              " variant requires both modalities (0 < image_clients < clients)");
    }
    if (static_cast<int>(cfg_.model.hidden_dims.size()) != cfg_.clients)
        throw ConfigError("model.hidden_dims must list one hidden dim per client");

    world_ = build_world(w.classes, w.image_dim, w.text_dim, w.corruption_q, w.noise_std, cfg_.seed);
    generator_ = make_generator(w.classes, cfg_.model.rep_dim, w.image_dim, w.generation_noise,
                                cfg_.seed);
    pretrain_decoder(generator_, world_);
    ca_ = make_ca_params(static_cast<std::size_t>(cfg_.model.rep_dim),
                         static_cast<std::size_t>(cfg_.fusion.ca_tokens), cfg_.seed);

    PartitionSpec spec{cfg_.clients, cfg_.image_clients, cfg_.data.dirichlet_alpha,
                       cfg_.data.samples_per_client};
    datasets_ = make_client_datasets(world_, spec, cfg_.seed);

    clients_.reserve(cfg_.clients);
    for (int k = 0; k < cfg_.clients; ++k) {
        const Modality m = datasets_[k].modality;
        RngStream rng = RngStream::derive(cfg_.seed, {kClientInit, static_cast<std::uint64_t>(k)});
        clients_.push_back(make_client_model(k, m, world_.feature_dim(m), cfg_.model.hidden_dims[k],
                                             cfg_.model.rep_dim, w.classes, rng));
    }

    const auto build_set = [&](Modality m, StreamTag tag, int per_class) {
        RngStream rng = RngStream::derive(cfg_.seed, {tag, m == Modality::image ? 0ULL : 1ULL});
        std::vector<Example> out;
        out.reserve(static_cast<std::size_t>(w.classes) * per_class);
        for (int c = 0; c < w.classes; ++c)
            for (int s = 0; s < per_class; ++s) out.push_back(sample_example(world_, c, m, rng));
        return out;
    };
    heldout_image_ = build_set(Modality::image, kHeldout, cfg_.data.heldout_per_class);
    heldout_text_ = build_set(Modality::text, kHeldout, cfg_.data.heldout_per_class);
    probe_image_ = build_set(Modality::image, kProbe, 2);
    probe_text_ = build_set(Modality::text, kProbe, 2);
}

void Experiment::pretrain_clients() {
    if (pretrained_) return;
    for (int k = 0; k < cfg_.clients; ++k) {
        RngStream rng = RngStream::derive(cfg_.seed, {kClientPretrain, static_cast<std::uint64_t>(k)});
        local_train(clients_[k], datasets_[k].examples, cfg_.train, rng);
    }
    pretrained_ = true;
    metrics_.push_back(compute_round_metrics(0, {}, {}, {}, false));
}

void Experiment::run_round() {
    if (!pretrained_) throw Error("run_round: clients must be pretrained first");
    const int t = ++round_;
    const std::uint64_t tu = static_cast<std::uint64_t>(t);
    const int D = cfg_.synthetic_per_round;
    const int K = cfg_.clients;
    const int C = cfg_.world.classes;
    const std::uint64_t B = cfg_.comm.float_bytes;
    const std::uint64_t d = static_cast<std::uint64_t>(cfg_.model.rep_dim);
    const std::uint64_t Du = static_cast<std::uint64_t>(D);

    // Step 2: cross-modal data synthesis.
    RngStream gen_rng = RngStream::derive(cfg_.seed, {kRound, tu, kGenerate});
    std::vector<SyntheticRecord> records(D);
    for (int i = 0; i < D; ++i) {
        records[i].index = i;
        records[i].prompt_label = static_cast<int>(gen_rng.uniform_index(C));
        auto [img, txt] = generate_synthetic(generator_, world_, records[i].prompt_label, gen_rng);
        records[i].image_feature = std::move(img);
        records[i].text_feature = std::move(txt);
    }

    // Distribute D^s by modality.
    for (int k = 0; k < K; ++k) {
        const std::uint64_t payload =
            clients_[k].modality == Modality::image ? cfg_.comm.image_bytes : cfg_.comm.text_bytes;
        ledger_.add({RoundMessage::Direction::down, RoundMessage::Kind::synthetic_batch,
                     Du * payload});
    }

    // Step 4: local inference.
    std::vector<std::vector<int>> labels(K, std::vector<int>(D));
    std::vector<std::vector<double>> weights(K, std::vector<double>(D));
    std::vector<std::vector<Vec>> reps(K, std::vector<Vec>(D));
    std::vector<std::vector<Vec>> aug_reps;
    std::vector<std::vector<Vec>> logits;
    if (cfg_.variant == Variant::unimodal) aug_reps.assign(K, std::vector<Vec>(D));
    if (cfg_.variant == Variant::logit) logits.assign(K, std::vector<Vec>(D));

    std::vector<Modality> modalities(K);
    for (int k = 0; k < K; ++k) {
        modalities[k] = clients_[k].modality;
        const bool is_image = modalities[k] == Modality::image;
        for (int i = 0; i < D; ++i) {
            const Vec& feat = is_image ? records[i].image_feature : records[i].text_feature;
            const Inference inf = infer(clients_[k], feat);
            labels[k][i] = inf.label;
            weights[k][i] = inf.entropy_weight;
            reps[k][i] = inf.representation;
            if (cfg_.variant == Variant::logit) logits[k][i] = inf.logits;
        }
        if (cfg_.variant == Variant::unimodal) {
            RngStream aug_rng =
                RngStream::derive(cfg_.seed, {kRound, tu, kAugment, static_cast<std::uint64_t>(k)});
            const AugmentParams ap{0.2, 0.5 * cfg_.world.noise_std};
            for (int i = 0; i < D; ++i) {
                const Vec& feat = is_image ? records[i].image_feature : records[i].text_feature;
                aug_reps[k][i] = infer(clients_[k], augment_feature(feat, ap, aug_rng)).representation;
            }
        }

        std::uint64_t up = 0;
        switch (cfg_.variant) {
            case Variant::representation: up = Du * B * (d + 2); break;
            case Variant::logit: up = Du * B * static_cast<std::uint64_t>(C); break;
            case Variant::unimodal: up = Du * B * (2 * d + 2); break;
        }
        ledger_.add({RoundMessage::Direction::up, RoundMessage::Kind::report_batch, up});
    }

    // Step 6: cross-client semantic alignment.
    if (cfg_.variant == Variant::logit) {
        for (const auto& [start, end] : make_batches(static_cast<std::size_t>(D),
                                                     static_cast<std::size_t>(cfg_.fusion.contrastive_batch))) {
            std::vector<std::vector<Vec>> batch_logits(K);
            for (int k = 0; k < K; ++k)
                batch_logits[k].assign(logits[k].begin() + start, logits[k].begin() + end);
            const LogitAggregation agg = aggregate_logits(batch_logits, modalities);
            for (std::size_t i = start; i < end; ++i) {
                const int label = agg.consensus_labels[i - start];
                records[i].consensus_label = label;
                int count = 0;
                double mass = 0.0;
                for (int k = 0; k < K; ++k) {
                    if (argmax_lowest(logits[k][i]) == label) {
                        ++count;
                        mass += weights[k][i];
                    }
                }
                records[i].vote_count = count;
                records[i].vote_mass = mass;
            }
        }
    } else {
        for (int i = 0; i < D; ++i) {
            std::vector<LabelVote> votes(K);
            for (int k = 0; k < K; ++k) votes[k] = {labels[k][i], weights[k][i]};
            const VoteOutcome outcome = lab_vote(votes, C);
            records[i].consensus_label = outcome.consensus_label;
            records[i].vote_count = outcome.vote_count;
            records[i].vote_mass = outcome.vote_mass;
        }
    }

    std::vector<SyntheticRecord> kept =
        filter_records(records, cfg_.fusion.beta, K, cfg_.fusion.weighted_votes);
    std::vector<std::size_t> kept_index;
    kept_index.reserve(kept.size());
    for (const auto& rec : kept) kept_index.push_back(static_cast<std::size_t>(rec.index));

    // MultiRepFusion over the kept records (representation and unimodal paths).
    std::vector<std::vector<Vec>> kept_reps;
    std::vector<Vec> kept_fused;
    const bool fuses_representations = cfg_.variant != Variant::logit;
    if (fuses_representations && !kept.empty()) {
        kept_reps.assign(K, std::vector<Vec>(kept.size()));
        for (int k = 0; k < K; ++k)
            for (std::size_t j = 0; j < kept_index.size(); ++j)
                kept_reps[k][j] = reps[k][kept_index[j]];

        std::vector<std::vector<Vec>> fusion_basis;
        if (cfg_.variant == Variant::representation) {
            fusion_basis = intermodal_fuse(kept_reps, modalities, ca_);
        } else {
            fusion_basis = kept_reps;  // inter-modal cross-attention bypassed
        }

        kept_fused.resize(kept.size());
        if (kept.size() == 1) {
            // A single survivor has no contrastive batch; fall back to the
            // uniform mixture over clients.
            const std::size_t dim = fusion_basis[0][0].size();
            Vec mr(dim, 0.0);
            for (int k = 0; k < K; ++k)
                for (std::size_t dd = 0; dd < dim; ++dd) mr[dd] += fusion_basis[k][0][dd];
            for (auto& x : mr) x /= static_cast<double>(K);
            kept_fused[0] = std::move(mr);
        } else {
            std::vector<std::vector<Vec>> aug_basis;
            if (cfg_.variant == Variant::unimodal) {
                aug_basis.assign(K, std::vector<Vec>(kept.size()));
                for (int k = 0; k < K; ++k)
                    for (std::size_t j = 0; j < kept_index.size(); ++j)
                        aug_basis[k][j] = aug_reps[k][kept_index[j]];
            }
            for (const auto& [start, end] : make_batches(kept.size(),
                                                         static_cast<std::size_t>(cfg_.fusion.contrastive_batch))) {
                std::vector<std::vector<Vec>> sub(K);
                for (int k = 0; k < K; ++k)
                    sub[k].assign(fusion_basis[k].begin() + start, fusion_basis[k].begin() + end);
                std::vector<std::vector<double>> w;
                if (cfg_.variant == Variant::representation) {
                    w = contrastive_weights(sub, modalities);
                } else {
                    std::vector<std::vector<Vec>> sub_raw(K), sub_aug(K);
                    for (int k = 0; k < K; ++k) {
                        sub_raw[k].assign(kept_reps[k].begin() + start, kept_reps[k].begin() + end);
                        sub_aug[k].assign(aug_basis[k].begin() + start, aug_basis[k].begin() + end);
                    }
                    w = unimodal_weights(sub_raw, sub_aug);
                }
                FuseResult fr = fuse(sub, w);
                for (std::size_t j = start; j < end; ++j) kept_fused[j] = std::move(fr.fused[j - start]);
            }
        }
        for (std::size_t j = 0; j < kept.size(); ++j) kept[j].fused_rep = kept_fused[j];
    }

    // Send (Y^s, MR^s) — or consensus labels only in the logit variant.
    for (int k = 0; k < K; ++k) {
        const std::uint64_t down =
            cfg_.variant == Variant::logit ? Du * B : Du * B * (d + 1);
        ledger_.add({RoundMessage::Direction::down, RoundMessage::Kind::refined_batch, down});
    }

    // Step 8: server T2I fine-tuning (encoder frozen, decoder only).
    RngStream ft_rng = RngStream::derive(cfg_.seed, {kRound, tu, kFinetune});
    const FinetuneConfig fcfg{cfg_.fusion.p_drop, cfg_.server.server_epochs,
                              cfg_.server.learning_rate};
    finetune_t2i(generator_, kept, fcfg, ft_rng);

    // Step 9: client re-training on the refined records.
    if (cfg_.server.client_epochs > 0 && !kept.empty()) {
        TrainConfig rcfg = cfg_.train;
        rcfg.epochs = cfg_.server.client_epochs;
        for (int k = 0; k < K; ++k) {
            std::vector<RefinedRecord> refined;
            refined.reserve(kept.size());
            for (const auto& rec : kept) {
                RefinedRecord r;
                r.feature = clients_[k].modality == Modality::image ? rec.image_feature
                                                                    : rec.text_feature;
                if (!rec.consensus_label.has_value())
                    throw Error("run_round: retraining observed a record without a consensus label");
                r.consensus_label = *rec.consensus_label;
                if (fuses_representations) {
                    if (!rec.fused_rep.has_value())
                        throw Error("run_round: retraining observed a record without MR^s");
                    r.fused_rep = *rec.fused_rep;
                }
                refined.push_back(std::move(r));
            }
            RngStream rt_rng =
                RngStream::derive(cfg_.seed, {kRound, tu, kRetrain, static_cast<std::uint64_t>(k)});
            if (cfg_.variant == Variant::logit)
                retrain_logit(clients_[k], refined, rcfg, rt_rng);
            else
                retrain(clients_[k], refined, rcfg, rt_rng);
        }
    }

    ledger_.close_round(t);
    metrics_.push_back(compute_round_metrics(t, kept, kept_reps, kept_fused, fuses_representations));

    const OracleClassifier oracle(world_);
    std::vector<RoundTraceRecord> trace_round;
    trace_round.reserve(records.size());
    std::vector<bool> is_kept(records.size(), false);
    for (std::size_t j : kept_index) is_kept[j] = true;
    for (const auto& rec : records) {
        RoundTraceRecord tr;
        tr.index = rec.index;
        tr.prompt_label = rec.prompt_label;
        tr.oracle_label = oracle.classify(rec.image_feature, Modality::image);
        tr.consensus_label = rec.consensus_label;
        tr.vote_count = rec.vote_count;
        tr.kept = is_kept[static_cast<std::size_t>(rec.index)];
        trace_round.push_back(tr);
    }
    trace_.push_back(std::move(trace_round));
}

RoundMetrics Experiment::compute_round_metrics(int round, const std::vector<SyntheticRecord>& kept,
                                               const std::vector<std::vector<Vec>>& kept_reps,
                                               const std::vector<Vec>& kept_fused,
                                               bool have_alignment) {
    RoundMetrics m;
    m.round = round;
    m.client_accuracy.resize(cfg_.clients);
    double img_sum = 0.0, txt_sum = 0.0;
    int img_n = 0, txt_n = 0;
    for (int k = 0; k < cfg_.clients; ++k) {
        const auto& heldout =
            clients_[k].modality == Modality::image ? heldout_image_ : heldout_text_;
        m.client_accuracy[k] = client_accuracy(clients_[k], heldout);
        if (clients_[k].modality == Modality::image) {
            img_sum += m.client_accuracy[k];
            ++img_n;
        } else {
            txt_sum += m.client_accuracy[k];
            ++txt_n;
        }
    }
    if (img_n > 0) m.img_acc = img_sum / img_n;
    if (txt_n > 0) m.txt_acc = txt_sum / txt_n;

    RngStream gan_rng =
        RngStream::derive(cfg_.seed, {kRound, static_cast<std::uint64_t>(round), kGanTest});
    m.t2i_accuracy = gan_test_accuracy(generator_, world_, cfg_.data.heldout_per_class, gan_rng);

    if (round >= 1) {
        m.kept_fraction =
            static_cast<double>(kept.size()) / static_cast<double>(cfg_.synthetic_per_round);
        if (!kept.empty()) {
            const OracleClassifier oracle(world_);
            long long correct = 0;
            for (const auto& rec : kept) {
                if (rec.consensus_label &&
                    *rec.consensus_label == oracle.classify(rec.image_feature, Modality::image))
                    ++correct;
            }
            m.labvote_fidelity = static_cast<double>(correct) / static_cast<double>(kept.size());
        }
    }

    double loss_sum = 0.0, grad_sum = 0.0;
    for (int k = 0; k < cfg_.clients; ++k) {
        ClientGradient g = zero_gradient(clients_[k]);
        loss_sum += pretrain_loss(clients_[k], datasets_[k].examples, &g);
        double sq = 0.0;
        for (double x : g.extractor.data) sq += x * x;
        for (double x : g.projector.data) sq += x * x;
        for (double x : g.classifier.data) sq += x * x;
        grad_sum += sq;
    }
    m.global_loss = loss_sum / cfg_.clients;
    m.grad_norm_sq = grad_sum / cfg_.clients;

    const TheoryEstimates est =
        theory_estimates(clients_, probe_image_, probe_text_,
                         have_alignment ? kept_reps : std::vector<std::vector<Vec>>{},
                         have_alignment ? kept_fused : std::vector<Vec>{});
    m.zeta_sq = est.zeta_sq;
    m.gamma_sq = est.gamma_sq;
    m.eps_align_sq = est.eps_align_sq;
    return m;
}

ExperimentResult Experiment::finish() {
    ExperimentResult res;
    res.metrics = metrics_;
    res.ledger = ledger_.rows();
    res.trace = trace_;
    return res;
}

std::string ExperimentResult::metrics_jsonl() const {
    std::ostringstream out;
    for (const auto& m : metrics) out << m.to_json_line() << '\n';
    return out.str();
}

std::string ExperimentResult::ledger_csv() const {
    std::ostringstream out;
    out << "round,upload_bytes,download_bytes\n";
    for (const auto& row : ledger)
        out << row.round << ',' << row.upload_bytes << ',' << row.download_bytes << '\n';
    return out.str();
}

ExperimentResult run_experiment(const ProtocolConfig& cfg) {
    Experiment exp(cfg);
    exp.pretrain_clients();
    for (int t = 0; t < cfg.rounds; ++t) exp.run_round();
    return exp.finish();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << content;
}

}  // namespace

ExperimentResult run_experiment_to_dir(const ProtocolConfig& cfg,
                                       const std::filesystem::path& out_dir, bool dump_trace) {
    ExperimentResult res = run_experiment(cfg);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "metrics.jsonl", res.metrics_jsonl());
    write_file(out_dir / "ledger.csv", res.ledger_csv());
    if (dump_trace) {
        const auto trace_dir = out_dir / "trace";
        std::filesystem::create_directories(trace_dir);
        for (std::size_t t = 0; t < res.trace.size(); ++t) {
            nlohmann::ordered_json arr = nlohmann::ordered_json::array();
            for (const auto& rec : res.trace[t]) {
                nlohmann::ordered_json j;
                j["index"] = rec.index;
                j["prompt_label"] = rec.prompt_label;
                j["oracle_label"] = rec.oracle_label;
                if (rec.consensus_label)
                    j["consensus_label"] = *rec.consensus_label;
                else
                    j["consensus_label"] = nullptr;
                if (rec.vote_count)
                    j["vote_count"] = *rec.vote_count;
                else
                    j["vote_count"] = nullptr;
                j["kept"] = rec.kept;
                arr.push_back(std::move(j));
            }
            char name[32];
            std::snprintf(name, sizeof(name), "round_%03zu.json", t + 1);
            write_file(trace_dir / name, arr.dump(2) + "\n");
        }
    }
    return res;
}

}  // namespace fedmmkt
