#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "steerlab/eval.hpp"
#include "steerlab/pipeline.hpp"

namespace {

using namespace steerlab;

struct StageArgs {
    std::string config_path;
    std::string out_dir;
    bool force = false;
};

RunConfig resolve_config(const StageArgs& args) {
    RunConfig config = load_run_config(args.config_path);
    if (!args.out_dir.empty()) {
        config.out_dir = args.out_dir;
    } else if (const char* env = std::getenv("STEERLAB_OUT"); env && *env) {
        config.out_dir = env;
    }
    return config;
}

void add_stage_options(CLI::App* cmd, StageArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out_dir, "output directory (overrides config and STEERLAB_OUT)");
    cmd->add_flag("--force", args.force, "re-run even when the stage is already complete");
}

void report_outcome(const StageOutcome& outcome) {
    std::cout << "[" << stage_name(outcome.stage) << "] "
              << (outcome.skipped ? "up to date, skipped" : "done") << "\n";
}

int run_2afc(const std::string& input, bool two_sided, const std::string& csv_out,
             const std::string& md_out) {
    std::ifstream in(input);
    if (!in) throw ConfigError("cannot read " + input);
    auto records = parse_2afc_csv(in);
    auto cells = analyze_2afc(records, two_sided ? BinomTail::TwoSided : BinomTail::Greater);
    std::string md = render_2afc_markdown(cells);
    std::cout << md;
    if (!csv_out.empty()) {
        std::ofstream out(csv_out);
        if (!out) throw IoError("cannot write " + csv_out);
        out << render_2afc_csv(cells);
    }
    if (!md_out.empty()) {
        std::ofstream out(md_out);
        if (!out) throw IoError("cannot write " + md_out);
        out << md;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"steerlab: activation-steering laboratory for a toy decoder-only transformer"};
    app.require_subcommand(1);

    StageArgs stage_args;
    std::map<std::string, CLI::App*> stage_cmds;
    for (Stage stage : all_stages()) {
        CLI::App* cmd = app.add_subcommand(stage_name(stage), "run the " + stage_name(stage) +
                                                                  " pipeline stage");
        add_stage_options(cmd, stage_args);
        stage_cmds[stage_name(stage)] = cmd;
    }

    CLI::App* run_all_cmd = app.add_subcommand("run-all", "run the full pipeline");
    add_stage_options(run_all_cmd, stage_args);
    std::string until_stage;
    run_all_cmd->add_option("--stage", until_stage, "stop after this stage");

    CLI::App* init_cmd = app.add_subcommand("init-config", "write a starter configuration");
    std::string init_path = "steerlab.json";
    std::string init_scale = "default";
    init_cmd->add_option("--out", init_path, "where to write the config");
    init_cmd->add_option("--scale", init_scale, "default | ci")
        ->check(CLI::IsMember({"default", "ci"}));

    CLI::App* afc_cmd = app.add_subcommand("analyze-2afc",
                                           "two-alternative forced-choice study statistics");
    std::string afc_input, afc_csv, afc_md;
    bool afc_two_sided = false;
    afc_cmd->add_option("--input", afc_input, "records CSV "
                                              "(participant_id,group,transition,choice)")
        ->required()
        ->check(CLI::ExistingFile);
    afc_cmd->add_flag("--two-sided", afc_two_sided, "two-sided binomial test");
    afc_cmd->add_option("--csv", afc_csv, "also write the table as CSV");
    afc_cmd->add_option("--md", afc_md, "also write the table as markdown");

    CLI11_PARSE(app, argc, argv);

    try {
        if (init_cmd->parsed()) {
            RunConfig config = init_scale == "ci" ? ci_run_config() : default_run_config();
            save_run_config(config, init_path);
            std::cout << "wrote " << init_path << "\n";
            return 0;
        }
        if (afc_cmd->parsed()) return run_2afc(afc_input, afc_two_sided, afc_csv, afc_md);

        if (run_all_cmd->parsed()) {
            Pipeline pipeline(resolve_config(stage_args));
            std::optional<Stage> until;
            if (!until_stage.empty()) until = stage_from_name(until_stage);
            for (const StageOutcome& outcome : pipeline.run_all(stage_args.force, until))
                report_outcome(outcome);
            std::cout << "artifacts in " << pipeline.config().out_dir.string() << "\n";
            return 0;
        }
        for (const auto& [name, cmd] : stage_cmds) {
            if (cmd->parsed()) {
                Pipeline pipeline(resolve_config(stage_args));
                report_outcome(pipeline.run_stage(stage_from_name(name), stage_args.force));
                return 0;
            }
        }
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing predecessor: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
