#include <doctest.h>

#include <string>

#include "fedmmkt/config.hpp"

using namespace fedmmkt;

namespace {

std::string minimal_config() {
    return R"({"rounds": 2, "clients": 4, "image_clients": 2, "synthetic_per_round": 10,
               "variant": "representation", "seed": 9})";
}

}  // namespace

TEST_CASE("empty config lists every missing required field") {
    try {
        parse_config_text("{}");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (const char* field :
             {"rounds", "clients", "image_clients", "synthetic_per_round", "variant", "seed"}) {
            CHECK_MESSAGE(msg.find(field) != std::string::npos, "missing field name: ", field);
        }
    }
}

TEST_CASE("minimal config parses with documented defaults") {
    const ProtocolConfig c = parse_config_text(minimal_config());
    CHECK(c.fusion.beta == 0.5);
    CHECK(c.fusion.p_drop == 0.2);
    CHECK(c.comm.float_bytes == 4);
    CHECK(c.train.kl_temperature == 1.0);
    CHECK(c.server.learning_rate == 2e-4);
    CHECK(c.model.hidden_dims.size() == 4);
}

TEST_CASE("unknown keys are rejected by name") {
    const std::string top = R"({"rounds": 1, "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "logit", "seed": 1, "rouns": 3})";
    CHECK_THROWS_WITH_AS(parse_config_text(top), doctest::Contains("rouns"), ConfigError);

    const std::string nested = R"({"rounds": 1, "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "logit", "seed": 1,
        "fusion": {"p_drp": 0.3}})";
    CHECK_THROWS_WITH_AS(parse_config_text(nested), doctest::Contains("fusion.p_drp"), ConfigError);
}

TEST_CASE("type and invariant violations name the offending field") {
    const std::string bad_type = R"({"rounds": "two", "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "logit", "seed": 1})";
    CHECK_THROWS_WITH_AS(parse_config_text(bad_type), doctest::Contains("rounds"), ConfigError);

    const std::string bad_variant = R"({"rounds": 1, "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "telepathy", "seed": 1})";
    CHECK_THROWS_AS(parse_config_text(bad_variant), ConfigError);

    const std::string uni_mix = R"({"rounds": 1, "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "unimodal", "seed": 1})";
    CHECK_THROWS_WITH_AS(parse_config_text(uni_mix), doctest::Contains("unimodal"), ConfigError);

    const std::string rep_single = R"({"rounds": 1, "clients": 4, "image_clients": 0,
        "synthetic_per_round": 10, "variant": "representation", "seed": 1})";
    CHECK_THROWS_AS(parse_config_text(rep_single), ConfigError);

    const std::string small_rep_dim = R"({"rounds": 1, "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "representation", "seed": 1,
        "world": {"classes": 40}, "model": {"rep_dim": 32}})";
    CHECK_THROWS_WITH_AS(parse_config_text(small_rep_dim), doctest::Contains("rep_dim"),
                         ConfigError);

    const std::string bad_tokens = R"({"rounds": 1, "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "representation", "seed": 1,
        "model": {"rep_dim": 30}, "fusion": {"ca_tokens": 4}})";
    CHECK_THROWS_WITH_AS(parse_config_text(bad_tokens), doctest::Contains("ca_tokens"),
                         ConfigError);

    const std::string bad_hidden = R"({"rounds": 1, "clients": 4, "image_clients": 2,
        "synthetic_per_round": 10, "variant": "representation", "seed": 1,
        "model": {"hidden_dims": [8, 8]}})";
    CHECK_THROWS_WITH_AS(parse_config_text(bad_hidden), doctest::Contains("hidden_dims"),
                         ConfigError);
}

TEST_CASE("scalar hidden_dims expands to one entry per client") {
    const std::string cfg = R"({"rounds": 1, "clients": 3, "image_clients": 1,
        "synthetic_per_round": 10, "variant": "representation", "seed": 1,
        "model": {"hidden_dims": 24}})";
    const ProtocolConfig c = parse_config_text(cfg);
    CHECK(c.model.hidden_dims == std::vector<int>{24, 24, 24});
}

TEST_CASE("serialization round trip is idempotent") {
    const ProtocolConfig parsed = parse_config_text(minimal_config());
    const std::string once = config_to_json(parsed);
    const std::string twice = config_to_json(parse_config_text(once));
    CHECK(once == twice);
}

TEST_CASE("presets are stable, complete, and valid") {
    const auto& all = presets();
    REQUIRE(all.size() == 5);
    CHECK(all[0].name == "default");
    CHECK(all[1].name == "smoke");
    CHECK(all[2].name == "appendix-f");
    CHECK(all[3].name == "flowers-analog");
    CHECK(all[4].name == "food-analog");

    for (const auto& preset : all) {
        CHECK_FALSE(preset.description.empty());
        // Every preset survives a serialize -> parse -> validate round trip.
        const ProtocolConfig reparsed = parse_config_text(config_to_json(preset.config));
        CHECK(config_to_json(reparsed) == config_to_json(preset.config));
    }

    CHECK_THROWS_AS(find_preset("nope"), ConfigError);
}

TEST_CASE("appendix-f preset carries the reference constants") {
    const ProtocolConfig c = find_preset("appendix-f").config;
    CHECK(c.clients == 8);
    CHECK(c.image_clients == 4);
    CHECK(c.synthetic_per_round == 100);
    CHECK(c.model.rep_dim == 768);
    CHECK(c.world.classes == 102);
    CHECK(c.comm.float_bytes == 4);
    CHECK(c.comm.image_bytes == 12288);
    CHECK(c.comm.text_bytes == 256);
}

TEST_CASE("food analog uses 101 classes") {
    CHECK(find_preset("food-analog").config.world.classes == 101);
    CHECK(find_preset("flowers-analog").config.world.classes == 102);
}
