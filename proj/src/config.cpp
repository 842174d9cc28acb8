#include "fedmmkt/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fedmmkt {

namespace {

using json = nlohmann::json;

void reject_unknown_keys(const json& obj, const std::string& scope,
                         std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* key : allowed) {
            if (it.key() == key) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError("unknown config key: " + scope + it.key());
    }
}

template <class T>
T get_field(const json& obj, const std::string& scope, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field has wrong type: " + scope + key);
    }
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

void validate(const ProtocolConfig& c) {
    require(c.rounds >= 1, "rounds must be >= 1");
    require(c.clients >= 1, "clients must be >= 1");
    require(c.image_clients >= 0 && c.image_clients <= c.clients,
            "image_clients must be in [0, clients]");
    require(c.synthetic_per_round >= 2, "synthetic_per_round must be >= 2");
    if (c.variant == Variant::unimodal) {
        require(c.image_clients == 0 || c.image_clients == c.clients,
                "unimodal variant requires image_clients == 0 or == clients");
    } else {
        require(c.image_clients >= 1 && c.image_clients <= c.clients - 1,
                to_string(c.variant) + " variant requires 0 < image_clients < clients");
    }
    require(c.world.classes >= 2, "world.classes must be >= 2");
    require(c.world.image_dim >= 2 && c.world.text_dim >= 2, "world dims must be >= 2");
    require(c.world.corruption_q >= 0.0 && c.world.corruption_q <= 1.0,
            "world.corruption_q must be in [0,1]");
    require(c.world.noise_std > 0.0, "world.noise_std must be positive");
    require(c.world.generation_noise >= 0.0, "world.generation_noise must be nonnegative");
    require(c.data.dirichlet_alpha > 0.0, "data.dirichlet_alpha must be positive");
    require(c.data.samples_per_client >= 1, "data.samples_per_client must be >= 1");
    require(c.data.heldout_per_class >= 1, "data.heldout_per_class must be >= 1");
    require(c.model.rep_dim >= 2, "model.rep_dim must be >= 2");
    require(c.model.rep_dim >= c.world.classes,
            "model.rep_dim must be >= world.classes (decoder pretraining is rank deficient otherwise)");
    require(static_cast<int>(c.model.hidden_dims.size()) == c.clients,
            "model.hidden_dims must list one entry per client");
    for (int h : c.model.hidden_dims) require(h >= 1, "model.hidden_dims entries must be >= 1");
    require(c.train.learning_rate > 0.0, "train.learning_rate must be positive");
    require(c.train.epochs >= 0, "train.epochs must be >= 0");
    require(c.train.batch_size >= 1, "train.batch_size must be >= 1");
    require(c.train.lambda >= 0.0, "train.lambda must be >= 0");
    require(c.train.kl_temperature > 0.0, "train.kl_temperature must be positive");
    require(c.server.learning_rate > 0.0, "server.learning_rate must be positive");
    require(c.server.server_epochs >= 0, "server.server_epochs must be >= 0");
    require(c.server.client_epochs >= 0, "server.client_epochs must be >= 0");
    require(c.fusion.beta >= 0.0 && c.fusion.beta <= 1.0, "fusion.beta must be in [0,1]");
    require(c.fusion.p_drop >= 0.0 && c.fusion.p_drop <= 1.0, "fusion.p_drop must be in [0,1]");
    require(c.fusion.contrastive_batch >= 2, "fusion.contrastive_batch must be >= 2");
    require(c.fusion.ca_tokens >= 1, "fusion.ca_tokens must be >= 1");
    require(c.model.rep_dim % c.fusion.ca_tokens == 0,
            "model.rep_dim must be divisible by fusion.ca_tokens");
    require(c.comm.float_bytes >= 1, "comm.float_bytes must be >= 1");
    require(c.comm.image_bytes >= 1, "comm.image_bytes must be >= 1");
    require(c.comm.text_bytes >= 1, "comm.text_bytes must be >= 1");
}

}  // namespace

ProtocolConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");

    reject_unknown_keys(root, "", {"rounds", "clients", "image_clients", "synthetic_per_round",
                                   "variant", "seed", "world", "data", "model", "train", "server",
                                   "fusion", "comm"});

    std::vector<std::string> missing;
    for (const char* key :
         {"rounds", "clients", "image_clients", "synthetic_per_round", "variant", "seed"}) {
        if (!root.contains(key)) missing.emplace_back(key);
    }
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << "missing required config fields:";
        for (const auto& k : missing) msg << ' ' << k;
        throw ConfigError(msg.str());
    }

    ProtocolConfig c;
    c.rounds = get_field<int>(root, "", "rounds", c.rounds);
    c.clients = get_field<int>(root, "", "clients", c.clients);
    c.image_clients = get_field<int>(root, "", "image_clients", c.image_clients);
    c.synthetic_per_round = get_field<int>(root, "", "synthetic_per_round", c.synthetic_per_round);
    c.variant = variant_from_string(get_field<std::string>(root, "", "variant", "representation"));
    c.seed = get_field<std::uint64_t>(root, "", "seed", c.seed);

    if (root.contains("world")) {
        const json& w = root.at("world");
        reject_unknown_keys(w, "world.", {"classes", "image_dim", "text_dim", "corruption_q",
                                          "noise_std", "generation_noise"});
        c.world.classes = get_field<int>(w, "world.", "classes", c.world.classes);
        c.world.image_dim = get_field<int>(w, "world.", "image_dim", c.world.image_dim);
        c.world.text_dim = get_field<int>(w, "world.", "text_dim", c.world.text_dim);
        c.world.corruption_q = get_field<double>(w, "world.", "corruption_q", c.world.corruption_q);
        c.world.noise_std = get_field<double>(w, "world.", "noise_std", c.world.noise_std);
        c.world.generation_noise =
            get_field<double>(w, "world.", "generation_noise", c.world.generation_noise);
    }
    if (root.contains("data")) {
        const json& d = root.at("data");
        reject_unknown_keys(d, "data.", {"dirichlet_alpha", "samples_per_client", "heldout_per_class"});
        c.data.dirichlet_alpha = get_field<double>(d, "data.", "dirichlet_alpha", c.data.dirichlet_alpha);
        c.data.samples_per_client =
            get_field<int>(d, "data.", "samples_per_client", c.data.samples_per_client);
        c.data.heldout_per_class =
            get_field<int>(d, "data.", "heldout_per_class", c.data.heldout_per_class);
    }
    if (root.contains("model")) {
        const json& m = root.at("model");
        reject_unknown_keys(m, "model.", {"rep_dim", "hidden_dims"});
        c.model.rep_dim = get_field<int>(m, "model.", "rep_dim", c.model.rep_dim);
        if (m.contains("hidden_dims")) {
            const json& h = m.at("hidden_dims");
            if (h.is_number_integer()) {
                c.model.hidden_dims.assign(static_cast<std::size_t>(std::max(c.clients, 0)),
                                           h.get<int>());
            } else if (h.is_array()) {
                try {
                    c.model.hidden_dims = h.get<std::vector<int>>();
                } catch (const json::exception&) {
                    throw ConfigError("config field has wrong type: model.hidden_dims");
                }
            } else {
                throw ConfigError("config field has wrong type: model.hidden_dims");
            }
        }
    }
    if (c.model.hidden_dims.empty())
        c.model.hidden_dims.assign(static_cast<std::size_t>(std::max(c.clients, 0)), 32);

    if (root.contains("train")) {
        const json& t = root.at("train");
        reject_unknown_keys(t, "train.",
                            {"learning_rate", "epochs", "batch_size", "lambda", "kl_temperature"});
        c.train.learning_rate = get_field<double>(t, "train.", "learning_rate", c.train.learning_rate);
        c.train.epochs = get_field<int>(t, "train.", "epochs", c.train.epochs);
        c.train.batch_size = get_field<int>(t, "train.", "batch_size", c.train.batch_size);
        c.train.lambda = get_field<double>(t, "train.", "lambda", c.train.lambda);
        c.train.kl_temperature = get_field<double>(t, "train.", "kl_temperature", c.train.kl_temperature);
    }
    if (root.contains("server")) {
        const json& s = root.at("server");
        reject_unknown_keys(s, "server.", {"learning_rate", "server_epochs", "client_epochs"});
        c.server.learning_rate = get_field<double>(s, "server.", "learning_rate", c.server.learning_rate);
        c.server.server_epochs = get_field<int>(s, "server.", "server_epochs", c.server.server_epochs);
        c.server.client_epochs = get_field<int>(s, "server.", "client_epochs", c.server.client_epochs);
    }
    if (root.contains("fusion")) {
        const json& f = root.at("fusion");
        reject_unknown_keys(f, "fusion.",
                            {"beta", "p_drop", "contrastive_batch", "ca_tokens", "weighted_votes"});
        c.fusion.beta = get_field<double>(f, "fusion.", "beta", c.fusion.beta);
        c.fusion.p_drop = get_field<double>(f, "fusion.", "p_drop", c.fusion.p_drop);
        c.fusion.contrastive_batch =
            get_field<int>(f, "fusion.", "contrastive_batch", c.fusion.contrastive_batch);
        c.fusion.ca_tokens = get_field<int>(f, "fusion.", "ca_tokens", c.fusion.ca_tokens);
        c.fusion.weighted_votes = get_field<bool>(f, "fusion.", "weighted_votes", c.fusion.weighted_votes);
    }
    if (root.contains("comm")) {
        const json& m = root.at("comm");
        reject_unknown_keys(m, "comm.", {"float_bytes", "image_bytes", "text_bytes"});
        c.comm.float_bytes = get_field<std::uint64_t>(m, "comm.", "float_bytes", c.comm.float_bytes);
        c.comm.image_bytes = get_field<std::uint64_t>(m, "comm.", "image_bytes", c.comm.image_bytes);
        c.comm.text_bytes = get_field<std::uint64_t>(m, "comm.", "text_bytes", c.comm.text_bytes);
    }

    validate(c);
    return c;
}

ProtocolConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_json(const ProtocolConfig& c) {
    nlohmann::ordered_json j;
    j["rounds"] = c.rounds;
    j["clients"] = c.clients;
    j["image_clients"] = c.image_clients;
    j["synthetic_per_round"] = c.synthetic_per_round;
    j["variant"] = to_string(c.variant);
    j["seed"] = c.seed;
    j["world"] = {{"classes", c.world.classes},
                  {"image_dim", c.world.image_dim},
                  {"text_dim", c.world.text_dim},
                  {"corruption_q", c.world.corruption_q},
                  {"noise_std", c.world.noise_std},
                  {"generation_noise", c.world.generation_noise}};
    j["data"] = {{"dirichlet_alpha", c.data.dirichlet_alpha},
                 {"samples_per_client", c.data.samples_per_client},
                 {"heldout_per_class", c.data.heldout_per_class}};
    j["model"] = {{"rep_dim", c.model.rep_dim}, {"hidden_dims", c.model.hidden_dims}};
    j["train"] = {{"learning_rate", c.train.learning_rate},
                  {"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"lambda", c.train.lambda},
                  {"kl_temperature", c.train.kl_temperature}};
    j["server"] = {{"learning_rate", c.server.learning_rate},
                   {"server_epochs", c.server.server_epochs},
                   {"client_epochs", c.server.client_epochs}};
    j["fusion"] = {{"beta", c.fusion.beta},
                   {"p_drop", c.fusion.p_drop},
                   {"contrastive_batch", c.fusion.contrastive_batch},
                   {"ca_tokens", c.fusion.ca_tokens},
                   {"weighted_votes", c.fusion.weighted_votes}};
    j["comm"] = {{"float_bytes", c.comm.float_bytes},
                 {"image_bytes", c.comm.image_bytes},
                 {"text_bytes", c.comm.text_bytes}};
    return j.dump(2) + "\n";
}

namespace {

ProtocolConfig desk_default_config() {
    // Calibrated so the desk run both transfers knowledge (clients are still
    // mid-training when rounds start) and keeps the global loss descending.
    // With K=4 the vote filter uses entropy mass at beta=0.25: a raw 0.5
    // count threshold needs 3-of-4 agreement, which starves classes known
    // only to one modality pair, while a raw 0.25 threshold lets confident
    // wrong pairs poison labels.
    ProtocolConfig c;
    c.rounds = 5;
    c.clients = 4;
    c.image_clients = 2;
    c.synthetic_per_round = 50;
    c.variant = Variant::representation;
    c.seed = 1;
    c.world = {10, 16, 16, 0.3, 0.5, 0.2};
    c.data = {0.5, 250, 20};
    c.model.rep_dim = 32;
    c.model.hidden_dims = {32, 32, 32, 32};
    c.train = {0.1, 5, 32, 1.25, 2.0};
    c.server = {0.02, 5, 2};
    c.fusion = {0.25, 0.2, 25, 4, true};
    c.comm = {4, 12288, 256};
    return c;
}

std::vector<ExperimentPreset> build_presets() {
    std::vector<ExperimentPreset> out;

    {
        ExperimentPreset p;
        p.name = "default";
        p.description = "desk-scale multimodal run: C=10, d=32, K=4 (2 image + 2 text), 5 rounds";
        p.config = desk_default_config();
        out.push_back(std::move(p));
    }
    {
        ExperimentPreset p;
        p.name = "smoke";
        p.description = "one-round tiny run for CI smoke checks (K=4, C=5, 20 synthetic samples)";
        ProtocolConfig c = desk_default_config();
        c.rounds = 1;
        c.synthetic_per_round = 20;
        c.world = {5, 8, 8, 0.3, 0.5, 0.2};
        c.data = {0.5, 100, 20};
        c.model.rep_dim = 16;
        c.model.hidden_dims = {16, 16, 16, 16};
        c.train = {0.1, 40, 16, 1.25, 2.0};
        c.server = {0.02, 3, 2};
        c.fusion.contrastive_batch = 10;
        p.config = std::move(c);
        out.push_back(std::move(p));
    }
    {
        ExperimentPreset p;
        p.name = "appendix-f";
        p.description = "communication-accounting constants: K=8 (4+4), |D^s|=100, d=768, C=102";
        // With 8 clients a raw-count threshold (5 of 8) is usable
        // directly, so the K=8 presets keep beta=0.5 unweighted.
        ProtocolConfig c = desk_default_config();
        c.rounds = 3;
        c.clients = 8;
        c.image_clients = 4;
        c.synthetic_per_round = 100;
        c.world = {102, 64, 64, 0.3, 0.5, 0.1};
        c.data = {0.5, 150, 5};
        c.model.rep_dim = 768;
        c.model.hidden_dims = {96, 112, 96, 112, 96, 112, 96, 112};
        c.train = {0.05, 40, 32, 1.25, 2.0};
        c.server = {0.02, 3, 1};
        c.fusion = {0.5, 0.2, 25, 4, false};
        c.comm = {4, 12288, 256};
        p.config = std::move(c);
        out.push_back(std::move(p));
    }
    {
        ExperimentPreset p;
        p.name = "flowers-analog";
        p.description = "102-class desk-scale analog of the flowers study";
        ProtocolConfig c = desk_default_config();
        c.rounds = 5;
        c.clients = 8;
        c.image_clients = 4;
        c.synthetic_per_round = 100;
        c.world = {102, 32, 32, 0.3, 0.5, 0.1};
        c.data = {0.5, 200, 5};
        c.model.rep_dim = 128;
        c.model.hidden_dims = {48, 56, 48, 56, 48, 56, 48, 56};
        c.train = {0.05, 60, 32, 1.25, 2.0};
        c.server = {0.05, 5, 2};
        c.fusion = {0.5, 0.2, 25, 4, false};
        p.config = std::move(c);
        out.push_back(std::move(p));
    }
    {
        ExperimentPreset p;
        p.name = "food-analog";
        p.description = "101-class desk-scale analog of the food study";
        ProtocolConfig c = desk_default_config();
        c.rounds = 5;
        c.clients = 8;
        c.image_clients = 4;
        c.synthetic_per_round = 100;
        c.world = {101, 32, 32, 0.3, 0.5, 0.1};
        c.data = {0.5, 200, 5};
        c.model.rep_dim = 128;
        c.model.hidden_dims = {48, 56, 48, 56, 48, 56, 48, 56};
        c.train = {0.05, 60, 32, 1.25, 2.0};
        c.server = {0.05, 5, 2};
        c.fusion = {0.5, 0.2, 25, 4, false};
        p.config = std::move(c);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

const std::vector<ExperimentPreset>& presets() {
    static const std::vector<ExperimentPreset> all = build_presets();
    return all;
}

const ExperimentPreset& find_preset(const std::string& name) {
    for (const auto& p : presets()) {
        if (p.name == name) return p;
    }
    throw ConfigError("unknown preset: " + name);
}

}  // namespace fedmmkt
