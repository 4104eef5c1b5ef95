// blowup_lab: run experiments from presets, config files or the command line.
//
//   blowup_lab run --config configs/acceptance.ini
//   blowup_lab ode-sweep --preset ss-n3-p2q2 --set eps_count=5 --out results/ss
//   blowup_lab preset-list
//
// Exit status: 0 all assertions passed, 1 an assertion or a module failed, 2 bad configuration.

#include "blowup/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace blowup;

namespace {

struct Common {
    std::string out;
    unsigned threads = 0;
    bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--out", c.out, "Output bundle directory (replaced atomically)");
    sub->add_option("--threads", c.threads, "Worker threads, 0 for hardware concurrency");
    sub->add_flag("--quiet", c.quiet, "Do not print the summary table");
}

int finish(const ReportBundle& b, bool quiet) {
    if (!quiet) {
        std::ifstream is(b.path / "summary.txt");
        std::cout << is.rdbuf();
    }
    std::cout << "bundle: " << b.path.string() << '\n';
    return exit_code(b);
}

ExperimentConfig single(ExperimentKind kind, const std::string& preset_name, const std::vector<std::string>& sets,
                        const std::string& name) {
    ExperimentConfig cfg;
    if (!preset_name.empty()) {
        cfg = preset(preset_name);
        if (cfg.kind != kind) {
            throw ConfigError("preset", "'" + preset_name + "' belongs to " + to_string(cfg.kind));
        }
    } else {
        cfg.kind = kind;
        cfg.name = to_string(kind);
    }
    if (!name.empty()) cfg.name = name;
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("set", "expected key=value, got '" + kv + "'");
        cfg.params[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Numerical experiments on blow-up for coupled wave systems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common common;

    struct KindCommand {
        const char* command;
        ExperimentKind kind;
        std::string preset;
        std::vector<std::string> sets;
        std::string name;
    };
    std::vector<KindCommand> kinds = {
        {"curves", ExperimentKind::CurvesScan, {}, {}, {}},     {"eigen", ExperimentKind::EigenVerify, {}, {}, {}},
        {"lemma22", ExperimentKind::Lemma22Verify, {}, {}, {}}, {"ode-sweep", ExperimentKind::OdeSweep, {}, {}, {}},
        {"pde-sweep", ExperimentKind::PdeSweep, {}, {}, {}},    {"kato", ExperimentKind::KatoGrid, {}, {}, {}},
        {"validate-metric", ExperimentKind::ValidateMetric, {}, {}, {}},
    };
    std::vector<CLI::App*> kind_apps;
    for (auto& k : kinds) {
        auto* sub = app.add_subcommand(k.command, std::string("Run one ") + to_string(k.kind) + " experiment");
        sub->add_option("--preset", k.preset, "Start from a named preset");
        sub->add_option("--set", k.sets, "Override a parameter, key=value (repeatable)");
        sub->add_option("--name", k.name, "Experiment name inside the bundle");
        add_common(sub, common);
        kind_apps.push_back(sub);
    }

    auto* list = app.add_subcommand("preset-list", "List the named presets");

    std::string config_path;
    std::vector<std::string> run_presets;
    auto* run = app.add_subcommand("run", "Run a config file or a list of presets");
    run->add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
    run->add_option("--preset", run_presets, "Preset to run (repeatable)");
    add_common(run, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (list->parsed()) {
            for (const auto& p : preset_table()) {
                std::printf("%-20s %-16s %s\n", p.name.c_str(), to_string(p.kind), p.description.c_str());
            }
            return 0;
        }
        RunConfig rc;
        if (run->parsed()) {
            if (config_path.empty() && run_presets.empty()) throw ConfigError("run", "give --config or --preset");
            if (!config_path.empty()) rc = load_config(config_path);
            for (const auto& name : run_presets) rc.experiments.push_back(preset(name));
        } else {
            for (std::size_t i = 0; i < kinds.size(); ++i) {
                if (kind_apps[i]->parsed()) {
                    rc.experiments.push_back(single(kinds[i].kind, kinds[i].preset, kinds[i].sets, kinds[i].name));
                }
            }
        }
        if (!common.out.empty()) rc.out = common.out;
        if (common.threads) rc.threads = common.threads;
        return finish(run_experiments(rc), common.quiet);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const LookupError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
