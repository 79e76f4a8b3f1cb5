// latent-scope: command-line front end for the phase-space tuning testbed.
//
//   latent-scope <datagen|train|tune|eval> --config <path> [--out <dir>] [--seeds a..b]
//
// Exit codes: 0 success, 2 configuration error (E_CONFIG on stderr),
// 3 numeric failure (E_NUMERIC on stderr).

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "lspt/commands.hpp"

namespace {

std::pair<uint64_t, uint64_t> parse_seed_range(const std::string& arg) {
    const auto dots = arg.find("..");
    std::string a_str = arg, b_str = arg;
    if (dots != std::string::npos) {
        a_str = arg.substr(0, dots);
        b_str = arg.substr(dots + 2);
    }
    try {
        size_t pa = 0, pb = 0;
        const uint64_t a = std::stoull(a_str, &pa);
        const uint64_t b = std::stoull(b_str, &pb);
        if (pa != a_str.size() || pb != b_str.size() || a_str.empty() || b_str.empty())
            throw std::invalid_argument("trailing characters");
        if (b < a) throw lspt::ConfigError("--seeds: range end before start in '" + arg + "'");
        return {a, b};
    } catch (const lspt::ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw lspt::ConfigError("--seeds: expected 'a..b' or 'a', got '" + arg + "'");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale testbed for latent-space tuning of phase-space models"};
    app.require_subcommand(1);

    std::string config_path, out_dir, seeds_arg;
    const char* names[] = {"datagen", "train", "tune", "eval"};
    const char* blurbs[] = {
        "generate a simulated beam dataset",
        "fit the encoder-decoder on a dataset",
        "run latent-space feedback against a target",
        "report reconstruction errors of a checkpoint",
    };
    for (int i = 0; i < 4; ++i) {
        CLI::App* sub = app.add_subcommand(names[i], blurbs[i]);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--seeds", seeds_arg, "seed range a..b for batch tuning");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
        return 2;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        lspt::ExperimentConfig cfg = lspt::load_config(config_path);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (!seeds_arg.empty()) {
            if (cmd != "tune")
                throw lspt::ConfigError("--seeds applies to the tune command only");
            const auto [a, b] = parse_seed_range(seeds_arg);
            cfg.seed = a;
            cfg.tune.n_runs = static_cast<int>(b - a + 1);
        }
        if (cmd == "datagen")
            lspt::cmd_datagen(cfg);
        else if (cmd == "train")
            lspt::cmd_train(cfg);
        else if (cmd == "tune")
            lspt::cmd_tune(cfg);
        else
            lspt::cmd_eval(cfg);
        return 0;
    } catch (const lspt::ConfigError& e) {
        std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
        return 2;
    } catch (const lspt::NumericError& e) {
        std::fprintf(stderr, "E_NUMERIC: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
        return 2;
    }
}
