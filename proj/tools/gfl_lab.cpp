// gfl-lab: command-line driver for the toy dense-detection experiments.
//
//   gfl-lab <command> --config <path> [--set key=value ...] [--out <dir>]
//
// GFL_LAB_OUT, when set, takes precedence over --out and the config's output_dir.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gfl/common.hpp"
#include "gfl/config.hpp"
#include "gfl/experiments.hpp"

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntime = 3 };

struct Options {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
};

}   // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Toy dense-detection lab for quality focal, distribution focal and generalized focal losses"};
    app.set_version_flag("--version", std::string(GFL_VERSION));
    app.require_subcommand(1);

    Options opts;
    for (const std::string& name : gfl::command_names()) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", opts.config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--set", opts.overrides, "Override a config value, e.g. train.iterations=500")
            ->take_all();
        sub->add_option("--out", opts.out, "Output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        gfl::ExperimentConfig config = gfl::load_config(opts.config, opts.overrides);
        std::filesystem::path out = config.output_dir;
        if (!opts.out.empty()) {
            out = opts.out;
        }
        if (const char* env = std::getenv(gfl::kOutputDirEnv); env != nullptr && *env != '\0') {
            out = env;
        }
        const gfl::RunResult r = gfl::run_command(command, config, out);
        std::cout << command << ": " << r.summary << " (" << out.string() << ")\n";
        return r.exit_code == 0 ? kOk : kCheckFailed;
    } catch (const gfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << command << " failed: " << e.what() << '\n';
        return kRuntime;
    }
}
