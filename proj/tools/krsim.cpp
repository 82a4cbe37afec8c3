#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "config.hpp"
#include "experiments.hpp"

namespace {

void print_usage() {
    std::fprintf(stderr,
                 "usage: krsim <subcommand> --config <path> [--seed S] [--out DIR] [--set key=value ...]\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kicked rotor experiment runner"};
    app.require_subcommand(1);

    std::string config_path, out_dir, chosen;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::vector<std::string> sets;
    for (const auto& name : kr::experiment_names()) {
        auto* sub = app.add_subcommand(name, kr::experiment_blurb(name));
        sub->add_option("--config", config_path, "experiment config file")->required();
        auto* seed_opt = sub->add_option("--seed", seed, "override run.seed");
        sub->add_option("--out", out_dir, "override run.out output directory");
        sub->add_option("--set", sets, "override one config entry (key=value, repeatable)");
        sub->callback([&, name, seed_opt] {
            chosen = name;
            seed_given = seed_opt->count() > 0;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        print_usage();
        return 2;
    }

    try {
        kr::Config cfg = kr::Config::from_file(config_path);
        if (cfg.empty()) throw kr::ConfigError("config file is empty: " + config_path);
        for (const auto& kv : sets) cfg.apply_override(kv);
        kr::RunOptions opt;
        opt.out_dir = out_dir;
        opt.seed = seed;
        opt.seed_given = seed_given;
        return kr::run_experiment(chosen, cfg, opt);
    } catch (const kr::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        print_usage();
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
