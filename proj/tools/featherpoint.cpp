#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "featherpoint/config.hpp"
#include "featherpoint/error.hpp"
#include "featherpoint/pipeline.hpp"

namespace fp = featherpoint;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitInternal = 4;

/// Pulls `--a.b value` and `--a.b=value` out of argv as config overrides.
std::vector<std::pair<std::string, std::string>> take_dotted_overrides(std::vector<std::string>& args) {
    std::vector<std::pair<std::string, std::string>> out;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        const auto eq = a.find('=');
        const std::string key =
            a.rfind("--", 0) == 0 ? a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2) : "";
        if (key.find('.') != std::string::npos) {
            if (eq != std::string::npos) {
                out.emplace_back(key, a.substr(eq + 1));
            } else if (i + 1 < args.size()) {
                out.emplace_back(key, args[++i]);
            } else {
                throw fp::ConfigError(key + ": missing value");
            }
        } else {
            rest.push_back(a);
        }
    }
    args = std::move(rest);
    return out;
}

void check_threads_env() {
    const char* v = std::getenv("FEATHERPOINT_THREADS");
    if (!v) return;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) throw fp::ConfigError("FEATHERPOINT_THREADS: expected a positive integer");
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::pair<std::string, std::string>> overrides;
    try {
        overrides = take_dotted_overrides(args);
        check_threads_env();
    } catch (const fp::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }

    CLI::App app{"featherpoint: distill, search, quantize, evaluate and budget a small keypoint network"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer("Config keys can be overridden as --<dotted.path> <value>, e.g. --train.epochs 5.\n"
               "Defaults:\n" +
               fp::config_to_json(fp::RunConfig{}));

    std::optional<std::string> config_path;
    std::vector<std::string> sets;
    bool print_config = false;
    app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "Override a config key: dotted.path=value");
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    app.add_option("--out_dir,--out-dir", out_dir, "Output directory (config key out_dir)");
    app.add_option("--seed", seed, "Run seed (config key seed)");
    app.add_flag("--print-config", print_config, "Print the resolved configuration before running");

    std::string model_path;
    std::string gen_dir;
    std::size_t gen_count = 4;

    auto* train = app.add_subcommand("train", "Distill a student and write model.fpt.json plus metrics");
    auto* search = app.add_subcommand("search", "Run the architecture search and write the chosen spec");
    auto* quantize = app.add_subcommand("quantize", "Calibrate, write qparams and compare float vs int8 metrics");
    quantize->add_option("-m,--model", model_path, "Model file")->required();
    auto* eval = app.add_subcommand("eval", "Benchmark a model under every configured threshold mode");
    eval->add_option("-m,--model", model_path, "Model file")->required();
    auto* report = app.add_subcommand("report", "Memory and compute report at float32 and int8");
    report->add_option("-m,--model", model_path, "Model file")->required();
    std::string image_path, dump_prefix;
    auto* extract = app.add_subcommand("extract", "Detect keypoints in one image and dump them as CSV + descriptors");
    extract->add_option("-m,--model", model_path, "Model file")->required();
    extract->add_option("-i,--image", image_path, "PGM/PPM image")->required()->check(CLI::ExistingFile);
    extract->add_option("-o,--out", dump_prefix, "Output prefix (writes <prefix>.csv and <prefix>.desc)")->required();
    auto* gen = app.add_subcommand("gen-data", "Write synthetic sequences in HPatches layout");
    gen->add_option("-o,--out", gen_dir, "Output directory")->required();
    gen->add_option("-n,--count", gen_count, "Number of sequences")->check(CLI::PositiveNumber);

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw fp::ConfigError(s + ": expected dotted.path=value");
            overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        if (out_dir) overrides.emplace_back("out_dir", nlohmann::json(*out_dir).dump());
        if (seed) overrides.emplace_back("seed", std::to_string(*seed));
        const fp::RunConfig cfg =
            fp::load_config(config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt, overrides);
        if (print_config) std::cout << fp::config_to_json(cfg);

        if (*train) {
            const auto o = fp::cmd_train(cfg);
            std::cout << "model: " << o.model_path.string() << "\nmetrics: " << o.metrics_path.string()
                      << "\nfinal validation loss: " << o.final_val_det + o.final_val_desc << '\n';
        } else if (*search) {
            const auto o = fp::cmd_search(cfg);
            std::cout << "spec: " << o.spec_path.string() << "\nlog: " << o.log_path.string() << '\n';
        } else if (*quantize) {
            const auto o = fp::cmd_quantize(cfg, model_path);
            std::cout << "qparams: " << o.manifest_path.string() << "\nreport: " << o.report_path.string() << '\n';
        } else if (*eval) {
            for (const auto& r : fp::cmd_eval(cfg, model_path)) {
                std::cout << r.mode << ": rep_i " << r.rep_i << " rep_v " << r.rep_v << " cor_i " << r.cor_i
                          << " cor_v " << r.cor_v << '\n';
            }
        } else if (*report) {
            for (const auto& r : fp::cmd_report(cfg, model_path)) {
                std::cout << (r.bytes_per_elem == 4 ? "float32" : "int8") << ": weights " << r.weights_bytes
                          << " B, peak activations " << r.peak_activation_bytes << " B, MACs " << r.mac_count
                          << ", fits " << (r.fits ? "yes" : "no") << '\n';
            }
        } else if (*extract) {
            const auto e = fp::cmd_extract(cfg, model_path, image_path, dump_prefix);
            std::cout << e.keypoints.size() << " keypoints written to " << dump_prefix << ".csv\n";
        } else if (*gen) {
            fp::cmd_gen_data(cfg, gen_dir, gen_count);
            std::cout << "wrote " << gen_count << " sequences to " << gen_dir << '\n';
        }
    } catch (const fp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitInput;
    } catch (const fp::IoError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const fp::FormatError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const fp::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitOk;
}
