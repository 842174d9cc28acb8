#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedmmkt/config.hpp"
#include "fedmmkt/protocol.hpp"

namespace {

fedmmkt::ProtocolConfig load_config(const std::string& config_path, const std::string& preset_name) {
    if (config_path.empty() == preset_name.empty())
        throw fedmmkt::ConfigError("provide exactly one of --config or --preset");
    if (!config_path.empty()) return fedmmkt::parse_config(config_path);
    return fedmmkt::find_preset(preset_name).config;
}

void print_round_summary(const fedmmkt::RoundMetrics& m) {
    const auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string("   -  ");
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%6.4f", *v);
        return std::string(buf);
    };
    char line[256];
    std::snprintf(line, sizeof(line), "round %3d  img_acc=%s  txt_acc=%s  t2i=%.4f  loss=%.4f",
                  m.round, opt(m.img_acc).c_str(), opt(m.txt_acc).c_str(), m.t2i_accuracy,
                  m.global_loss);
    std::cout << line;
    if (m.kept_fraction) {
        std::snprintf(line, sizeof(line), "  kept=%.2f", *m.kept_fraction);
        std::cout << line;
    }
    if (m.labvote_fidelity) {
        std::snprintf(line, sizeof(line), "  labvote_fidelity=%.4f", *m.labvote_fidelity);
        std::cout << line;
    }
    std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedmmkt: deterministic federated multimodal knowledge-transfer simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string preset_name;
    std::string out_dir = "out";
    std::string variant_override;
    std::optional<std::uint64_t> seed_override;
    bool dump_trace = false;

    CLI::App* run = app.add_subcommand("run", "run an experiment and write metrics/ledger files");
    run->add_option("--config", config_path, "path to a JSON config file");
    run->add_option("--preset", preset_name, "name of a shipped preset (see `presets`)");
    run->add_option("--seed", seed_override, "override the master seed");
    run->add_option("--out", out_dir, "output directory (default: out)");
    run->add_option("--variant", variant_override, "override the variant: rep|logit|uni");
    run->add_flag("--dump-trace", dump_trace, "write per-round record traces under <out>/trace/");

    std::string cost_config_path;
    std::string cost_preset_name;
    CLI::App* cost = app.add_subcommand("comm-cost", "print the per-round communication cost table");
    cost->add_option("--config", cost_config_path, "path to a JSON config file");
    cost->add_option("--preset", cost_preset_name, "name of a shipped preset");

    CLI::App* list = app.add_subcommand("presets", "list shipped experiment presets");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            fedmmkt::ProtocolConfig cfg = load_config(config_path, preset_name);
            if (seed_override) cfg.seed = *seed_override;
            if (!variant_override.empty())
                cfg.variant = fedmmkt::variant_from_string(variant_override);
            const auto result = fedmmkt::run_experiment_to_dir(cfg, out_dir, dump_trace);
            for (const auto& m : result.metrics) print_round_summary(m);
            std::cout << "wrote " << (std::filesystem::path(out_dir) / "metrics.jsonl").string()
                      << " and " << (std::filesystem::path(out_dir) / "ledger.csv").string() << '\n';
        } else if (cost->parsed()) {
            fedmmkt::ProtocolConfig cfg = load_config(cost_config_path, cost_preset_name);
            std::cout << fedmmkt::render_comm_cost_table(cfg);
        } else if (list->parsed()) {
            for (const auto& p : fedmmkt::presets())
                std::cout << p.name << "  -  " << p.description << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
