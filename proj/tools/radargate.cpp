#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "radargate/experiments.hpp"

namespace rg = radargate;

int main(int argc, char** argv) {
    CLI::App app{"radargate: gated LoRA composition experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;

    for (const char* name : {"gradcheck", "train", "scale-sweep", "cone-demo", "complexity"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "flat key = value config file");
        sub->add_option("--out", out_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", seed, "overrides the seed in the config");
    }
    CLI11_PARSE(app, argc, argv);

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        rg::ExperimentConfig cfg = rg::command_defaults(cmd);
        if (!config_path.empty()) cfg = rg::load_config(config_path, cfg);
        if (seed) cfg.train.seed = *seed;

        rg::CommandResult res;
        const std::filesystem::path out(out_dir);
        if (cmd == "gradcheck") res = rg::cmd_gradcheck(cfg, out);
        else if (cmd == "train") res = rg::cmd_train(cfg, out);
        else if (cmd == "scale-sweep") res = rg::cmd_scale_sweep(cfg, out);
        else if (cmd == "cone-demo") res = rg::cmd_cone_demo(cfg, out);
        else res = rg::cmd_complexity(cfg, out);

        std::cout << res.summary;
        for (const auto& f : res.files) std::cout << "wrote " << f.string() << "\n";
        return res.ok ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "radargate " << cmd << ": " << e.what() << "\n";
        return 2;
    }
}
