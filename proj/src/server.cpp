#include "fedmmkt/server.hpp"

#include <algorithm>
#include <cmath>

namespace fedmmkt {

Vec GeneratorModel::embedding(int label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= encoder.rows)
        throw InvalidInputError("embedding: label out of range");
    return Vec(encoder.data.begin() + label * encoder.cols,
               encoder.data.begin() + (label + 1) * encoder.cols);
}

GeneratorModel make_generator(int classes, int rep_dim, int image_dim, double generation_noise,
                              std::uint64_t seed) {
    if (classes < 2 || rep_dim < 1 || image_dim < 1)
        throw InvalidInputError("make_generator: bad dimensions");
    if (generation_noise < 0.0)
        throw InvalidInputError("make_generator: generation_noise must be nonnegative");
    if (classes > rep_dim)
        throw PretrainError("make_generator: rep_dim < classes, encoder/decoder fit is rank deficient");
    GeneratorModel gen;
    RngStream rng = RngStream::derive(seed, {kGeneratorInit});
    gen.encoder = orthonormal_rows(static_cast<std::size_t>(classes),
                                   static_cast<std::size_t>(rep_dim), rng);
    gen.decoder = Mat(static_cast<std::size_t>(image_dim), static_cast<std::size_t>(rep_dim));
    gen.generation_noise = generation_noise;
    return gen;
}

void pretrain_decoder(GeneratorModel& gen, const FeatureWorld& world) {
    const std::size_t classes = gen.num_classes();
    if (static_cast<int>(classes) != world.num_classes)
        throw InvalidInputError("pretrain_decoder: class count mismatch with world");
    if (classes > gen.rep_dim())
        throw PretrainError("pretrain_decoder: rep_dim < classes, system is rank deficient");
    if (gen.image_dim() != static_cast<std::size_t>(world.image_dim))
        throw InvalidInputError("pretrain_decoder: image dim mismatch with world");

    // Minimal-norm exact fit: W = M^T G^{-1} E with G = E E^T (C x C),
    // E = encoder rows, M rows = mu_I(pi(y)).
    Mat gram(classes, classes);
    for (std::size_t i = 0; i < classes; ++i) {
        for (std::size_t j = 0; j < classes; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < gen.rep_dim(); ++k) s += gen.encoder(i, k) * gen.encoder(j, k);
            gram(i, j) = s;
        }
    }
    Mat targets(classes, gen.image_dim());
    for (std::size_t y = 0; y < classes; ++y) {
        const Vec& proto = world.image_prototypes[world.corruption_perm[y]];
        for (std::size_t k = 0; k < gen.image_dim(); ++k) targets(y, k) = proto[k];
    }
    solve_linear(gram, targets);  // targets := G^{-1} M

    Mat decoder(gen.image_dim(), gen.rep_dim());
    for (std::size_t y = 0; y < classes; ++y) {
        for (std::size_t r = 0; r < gen.image_dim(); ++r) {
            const double t = targets(y, r);
            if (t == 0.0) continue;
            for (std::size_t c = 0; c < gen.rep_dim(); ++c) decoder(r, c) += t * gen.encoder(y, c);
        }
    }
    gen.decoder = std::move(decoder);
}

std::pair<Vec, Vec> generate_synthetic(const GeneratorModel& gen, const FeatureWorld& world,
                                       int label, RngStream& rng) {
    if (label < 0 || label >= world.num_classes)
        throw InvalidInputError("generate_synthetic: label out of range");
    Vec image = matvec(gen.decoder, gen.embedding(label));
    if (gen.generation_noise > 0.0)
        for (auto& x : image) x += rng.normal(0.0, gen.generation_noise);
    Vec text = matvec(world.cross_modal_map, image);
    if (gen.generation_noise > 0.0)
        for (auto& x : text) x += rng.normal(0.0, gen.generation_noise);
    return {std::move(image), std::move(text)};
}

namespace {

// Conditioning input for fine-tuning and conditional generation. The fused
// representation is rescaled to the encoder-embedding norm (1, rows are
// orthonormal) so the addition mixes commensurate latents; unscaled client
// representations would swamp the label embedding and unanchor the
// unconditional path.
Vec conditioning_input(const GeneratorModel& gen, int label, const Vec& fused_rep) {
    Vec z = gen.embedding(label);
    if (fused_rep.size() != z.size())
        throw InvalidInputError("conditioning input: fused rep dim mismatch");
    const double n = norm(fused_rep);
    if (n > 1e-12) {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += fused_rep[i] / n;
    }
    return z;
}

}  // namespace

Vec generate_post_finetune(const GeneratorModel& gen, int label, const Vec* fused_rep,
                           RngStream& rng) {
    Vec z = fused_rep ? conditioning_input(gen, label, *fused_rep) : gen.embedding(label);
    Vec image = matvec(gen.decoder, z);
    if (gen.generation_noise > 0.0)
        for (auto& x : image) x += rng.normal(0.0, gen.generation_noise);
    return image;
}

VoteOutcome lab_vote(std::span<const LabelVote> votes, int num_classes) {
    if (votes.empty()) throw InvalidInputError("lab_vote: no votes");
    if (num_classes < 1) throw InvalidInputError("lab_vote: bad class count");
    std::vector<std::vector<double>> per_class(num_classes);
    for (const LabelVote& v : votes) {
        if (v.label < 0 || v.label >= num_classes)
            throw InvalidInputError("lab_vote: label out of range");
        per_class[v.label].push_back(v.weight);
    }
    // Sorted accumulation makes the argmax exactly order-invariant.
    Vec mass(num_classes, 0.0);
    for (int c = 0; c < num_classes; ++c) {
        std::sort(per_class[c].begin(), per_class[c].end());
        for (double w : per_class[c]) mass[c] += w;
    }
    VoteOutcome out;
    out.consensus_label = 0;
    for (int c = 1; c < num_classes; ++c) {
        if (mass[c] > mass[out.consensus_label]) out.consensus_label = c;
    }
    out.vote_mass = mass[out.consensus_label];
    out.vote_count = 0;
    for (const LabelVote& v : votes) {
        if (v.label == out.consensus_label) ++out.vote_count;
    }
    return out;
}

std::vector<SyntheticRecord> filter_records(const std::vector<SyntheticRecord>& records,
                                            double beta, int num_clients, bool weighted_votes) {
    if (beta < 0.0 || beta > 1.0) throw InvalidInputError("filter_records: beta must be in [0,1]");
    // Tiny epsilon keeps floor(beta*K) stable when the product lands just
    // below an integer (e.g. 0.7 * 10 = 6.999...).
    const double threshold = std::floor(beta * static_cast<double>(num_clients) + 1e-9);
    std::vector<SyntheticRecord> kept;
    for (const auto& rec : records) {
        if (!rec.vote_count.has_value())
            throw InvalidInputError("filter_records: record missing vote count");
        const double votes = weighted_votes ? rec.vote_mass.value_or(0.0)
                                            : static_cast<double>(*rec.vote_count);
        if (votes > threshold) kept.push_back(rec);
    }
    return kept;
}

std::vector<std::vector<Vec>> intermodal_fuse(const std::vector<std::vector<Vec>>& reps,
                                              const std::vector<Modality>& modalities,
                                              const CAParams& ca) {
    const std::size_t clients = reps.size();
    if (clients == 0 || modalities.size() != clients)
        throw InvalidInputError("intermodal_fuse: bad inputs");
    std::size_t images = 0;
    for (Modality m : modalities)
        if (m == Modality::image) ++images;
    if (images == 0 || images == clients)
        throw ModalityAbsentError("intermodal_fuse: both modalities required");

    const std::size_t records = reps[0].size();
    for (const auto& r : reps)
        if (r.size() != records) throw InvalidInputError("intermodal_fuse: ragged record counts");
    if (records == 0) return std::vector<std::vector<Vec>>(clients);

    const std::size_t dim = reps[0][0].size();
    std::vector<std::vector<Vec>> fused(clients, std::vector<Vec>(records));
    for (std::size_t i = 0; i < records; ++i) {
        Vec image_mean(dim, 0.0), text_mean(dim, 0.0);
        for (std::size_t k = 0; k < clients; ++k) {
            Vec& acc = modalities[k] == Modality::image ? image_mean : text_mean;
            for (std::size_t d = 0; d < dim; ++d) acc[d] += reps[k][i][d];
        }
        for (auto& x : image_mean) x /= static_cast<double>(images);
        for (auto& x : text_mean) x /= static_cast<double>(clients - images);

        for (std::size_t k = 0; k < clients; ++k) {
            const Vec& other = modalities[k] == Modality::image ? text_mean : image_mean;
            fused[k][i] = cross_attention(reps[k][i], other, ca);
        }
    }
    return fused;
}

std::vector<std::vector<double>> contrastive_weights(const std::vector<std::vector<Vec>>& fused,
                                                     const std::vector<Modality>& modalities) {
    const std::size_t clients = fused.size();
    if (clients == 0 || modalities.size() != clients)
        throw InvalidInputError("contrastive_weights: bad inputs");
    const std::size_t batch = fused[0].size();
    if (batch < 2) throw ContrastiveDegenerateError("contrastive_weights: batch must have >= 2 records");

    std::size_t images = 0;
    for (Modality m : modalities)
        if (m == Modality::image) ++images;
    if (images == 0 || images == clients)
        throw ModalityAbsentError("contrastive_weights: both modalities required");

    const std::size_t dim = fused[0][0].size();
    // Per-record mean of each modality's fused representations.
    std::vector<Vec> image_mean(batch, Vec(dim, 0.0)), text_mean(batch, Vec(dim, 0.0));
    for (std::size_t k = 0; k < clients; ++k) {
        auto& acc = modalities[k] == Modality::image ? image_mean : text_mean;
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t d = 0; d < dim; ++d) acc[i][d] += fused[k][i][d];
    }
    for (std::size_t i = 0; i < batch; ++i) {
        for (auto& x : image_mean[i]) x /= static_cast<double>(images);
        for (auto& x : text_mean[i]) x /= static_cast<double>(clients - images);
    }

    std::vector<std::vector<double>> w(batch, std::vector<double>(clients, 0.0));
    for (std::size_t k = 0; k < clients; ++k) {
        const auto& other = modalities[k] == Modality::image ? text_mean : image_mean;
        for (std::size_t i = 0; i < batch; ++i) {
            const double own = cosine(fused[k][i], other[i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < batch; ++j) {
                if (j == i) continue;
                denom += std::exp(cosine(fused[k][i], other[j]));
            }
            w[i][k] = own - std::log(denom);
        }
    }
    return w;
}

FuseResult fuse(const std::vector<std::vector<Vec>>& client_reps,
                const std::vector<std::vector<double>>& weights) {
    const std::size_t clients = client_reps.size();
    if (clients == 0) throw InvalidInputError("fuse: no clients");
    const std::size_t records = client_reps[0].size();
    for (const auto& r : client_reps)
        if (r.size() != records) throw InvalidInputError("fuse: ragged record counts");
    if (weights.size() != records) throw InvalidInputError("fuse: one weight row per record required");

    FuseResult out;
    out.fused.resize(records);
    out.alpha.resize(records);
    for (std::size_t i = 0; i < records; ++i) {
        if (weights[i].size() != clients)
            throw InvalidInputError("fuse: one weight per client required");
        out.alpha[i] = softmax(weights[i]).entries();
        const std::size_t dim = client_reps[0][i].size();
        Vec mr(dim, 0.0);
        for (std::size_t k = 0; k < clients; ++k) {
            const double a = out.alpha[i][k];
            for (std::size_t d = 0; d < dim; ++d) mr[d] += a * client_reps[k][i][d];
        }
        out.fused[i] = std::move(mr);
    }
    return out;
}

double decoder_loss(const GeneratorModel& gen, std::span<const Vec> zs,
                    std::span<const Vec> targets, Mat* grad) {
    if (zs.size() != targets.size()) throw InvalidInputError("decoder_loss: size mismatch");
    if (zs.empty()) return 0.0;
    const double inv_dim = 1.0 / static_cast<double>(gen.image_dim());
    const double inv_n = 1.0 / static_cast<double>(zs.size());
    double total = 0.0;
    for (std::size_t i = 0; i < zs.size(); ++i) {
        Vec residual = matvec(gen.decoder, zs[i]);
        for (std::size_t d = 0; d < residual.size(); ++d) residual[d] -= targets[i][d];
        total += dot(residual, residual) * inv_dim;
        if (grad) add_outer(*grad, 2.0 * inv_dim * inv_n, residual, zs[i]);
    }
    return total * inv_n;
}

FinetuneStats finetune_t2i(GeneratorModel& gen, const std::vector<SyntheticRecord>& kept,
                           const FinetuneConfig& cfg, RngStream& rng) {
    FinetuneStats stats;
    if (kept.empty()) {
        stats.skipped_empty = true;
        return stats;
    }
    for (const auto& rec : kept) {
        if (!rec.consensus_label.has_value())
            throw InvalidInputError("finetune_t2i: record missing consensus label");
    }

    const double inv_dim = 1.0 / static_cast<double>(gen.image_dim());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Cosine annealing from the initial rate toward zero.
        const double lr = cfg.learning_rate * 0.5 *
                          (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                          static_cast<double>(cfg.epochs)));
        double epoch_loss = 0.0;
        for (const auto& rec : kept) {
            Vec z;
            if (rec.fused_rep.has_value()) {
                ++stats.conditioning_draws;
                if (rng.bernoulli(cfg.p_drop)) {
                    ++stats.mr_omitted;
                    z = gen.embedding(*rec.consensus_label);
                } else {
                    z = conditioning_input(gen, *rec.consensus_label, *rec.fused_rep);
                }
            } else {
                z = gen.embedding(*rec.consensus_label);
            }
            Vec residual = matvec(gen.decoder, z);
            for (std::size_t d = 0; d < residual.size(); ++d) residual[d] -= rec.image_feature[d];
            epoch_loss += dot(residual, residual) * inv_dim;
            add_outer(gen.decoder, -lr * 2.0 * inv_dim, residual, z);
        }
        stats.final_loss = epoch_loss / static_cast<double>(kept.size());
        if (!std::isfinite(stats.final_loss)) throw TrainingDivergedError(epoch);
    }
    return stats;
}

}  // namespace fedmmkt
