#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "splitcom/harness.hpp"
#include "splitcom/serialize.hpp"

using namespace splitcom;
namespace fs = std::filesystem;

namespace {

struct CliConfig {
    run::HarnessConfig hc;
    std::string preset = "fixed_standard";
};

std::string dump_config(const CliConfig& c) {
    std::ostringstream os;
    os << "preset=" << c.preset << "\nout_dir=" << c.hc.out_dir << "\nseed=" << c.hc.seed
       << "\nclients=" << c.hc.corpus.n_clients << "\ntrain_size=" << c.hc.corpus.train_size
       << "\nval_size=" << c.hc.corpus.val_size << "\ntest_size=" << c.hc.corpus.test_size
       << "\npretrain_size=" << c.hc.corpus.pretrain_size << "\npretrain_epochs=" << c.hc.pretrain.epochs
       << "\npretrain_lr=" << c.hc.pretrain.peak_lr << "\nepochs=" << c.hc.engine.epochs
       << "\nbatch_size=" << c.hc.engine.batch_size << "\npeak_lr=" << c.hc.engine.peak_lr
       << "\naggregate_every=" << c.hc.engine.aggregate_every << "\ntheta0=" << c.hc.engine.theta0
       << "\nvocab_size=" << c.hc.engine.model.vocab_size << "\nd_model=" << c.hc.engine.model.d_model
       << "\nn_heads=" << c.hc.engine.model.n_heads << "\nn_layers=" << c.hc.engine.model.n_layers
       << "\nseq_len=" << c.hc.engine.model.seq_len << "\nlora_rank=" << c.hc.engine.model.lora_rank
       << "\nfrontend_layers=" << c.hc.engine.model.frontend_layers << "\n";
    return os.str();
}

void apply_kv(CliConfig& c, const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_f = [&] { return std::stof(value); };
    if (key == "preset")
        c.preset = value;
    else if (key == "out_dir")
        c.hc.out_dir = value;
    else if (key == "seed")
        c.hc.seed = std::stoull(value);
    else if (key == "clients")
        c.hc.corpus.n_clients = as_int();
    else if (key == "train_size")
        c.hc.corpus.train_size = as_int();
    else if (key == "val_size")
        c.hc.corpus.val_size = as_int();
    else if (key == "test_size")
        c.hc.corpus.test_size = as_int();
    else if (key == "pretrain_size")
        c.hc.corpus.pretrain_size = as_int();
    else if (key == "pretrain_epochs")
        c.hc.pretrain.epochs = as_int();
    else if (key == "pretrain_lr")
        c.hc.pretrain.peak_lr = as_f();
    else if (key == "epochs")
        c.hc.engine.epochs = as_int();
    else if (key == "batch_size")
        c.hc.engine.batch_size = as_int();
    else if (key == "peak_lr")
        c.hc.engine.peak_lr = as_f();
    else if (key == "aggregate_every")
        c.hc.engine.aggregate_every = as_int();
    else if (key == "theta0")
        c.hc.engine.theta0 = as_f();
    else if (key == "vocab_size")
        c.hc.engine.model.vocab_size = as_int();
    else if (key == "d_model")
        c.hc.engine.model.d_model = as_int();
    else if (key == "n_heads")
        c.hc.engine.model.n_heads = as_int();
    else if (key == "n_layers")
        c.hc.engine.model.n_layers = as_int();
    else if (key == "seq_len")
        c.hc.engine.model.seq_len = as_int();
    else if (key == "lora_rank")
        c.hc.engine.model.lora_rank = as_int();
    else if (key == "frontend_layers")
        c.hc.engine.model.frontend_layers = as_int();
    else
        throw ConfigError("unknown config key: " + key);
}

void load_config_file(CliConfig& c, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        apply_kv(c, line.substr(0, eq), line.substr(eq + 1));
    }
}

int cmd_audit(const std::vector<std::string>& dirs) {
    bool all_ok = true;
    for (const auto& dir : dirs) {
        auto check = [&](const char* what, bool ok) {
            std::cout << dir << ": " << what << ": " << (ok ? "ok" : "FAIL") << "\n";
            all_ok = all_ok && ok;
        };
        std::ifstream csv(fs::path(dir) / "metrics.csv");
        std::string header;
        std::getline(csv, header);
        check("metrics.csv header", static_cast<bool>(csv) && header == run::kCsvHeader);

        bool json_ok = false;
        try {
            std::ifstream js(fs::path(dir) / "summary.json");
            auto j = nlohmann::json::parse(js);
            json_ok = j.contains("preset") && j.contains("seed") && j.contains("comm_ratio_up") &&
                      j.contains("comm_ratio_total") && j.contains("final_val_ppl") && j.contains("wall_clock_s");
        } catch (const std::exception&) {
        }
        check("summary.json schema", json_ok);

        bool ck_ok = false;
        try {
            auto ck = ser::decode_checkpoint(ser::read_file((fs::path(dir) / "adapters.scmd").string()));
            ck_ok = !ck.tensors.empty() && !ck.config.empty();
        } catch (const std::exception&) {
        }
        check("adapters.scmd checkpoint", ck_ok);
        check("ledger.txt present", fs::exists(fs::path(dir) / "ledger.txt"));
        check("config.txt present", fs::exists(fs::path(dir) / "config.txt"));
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"split fine-tuning engine with similarity-gated transmission"};
    app.require_subcommand(1);

    CliConfig c;
    std::string config_file, topology, policy, preset_flag, out_flag;
    float theta = 0.0f;
    int epochs = 0, clients = 0;
    std::uint64_t seed = 0;
    bool int8 = false, dump = false;

    auto* run_cmd = app.add_subcommand("run", "run one preset end to end");
    run_cmd->add_option("--config", config_file, "flat key=value config file");
    run_cmd->add_option("--preset", preset_flag, "preset name, e.g. baseline, bbc_ushape, fixed_standardQ");
    run_cmd->add_option("--topology", topology, "standard|bidirectional|ushape");
    run_cmd->add_option("--policy", policy, "fixed|bbc|ddpg");
    run_cmd->add_option("--theta", theta, "fixed threshold / policy start");
    run_cmd->add_option("--epochs", epochs, "training epochs");
    run_cmd->add_option("--clients", clients, "number of clients");
    run_cmd->add_option("--seed", seed, "run seed (corpus + training)");
    run_cmd->add_option("--out", out_flag, "run directory parent");
    run_cmd->add_flag("--quantize-int8", int8, "INT8 wire codec");
    run_cmd->add_flag("--dump-config", dump, "print the resolved flat config and exit");

    auto* audit_cmd = app.add_subcommand("audit", "verify the artifact set of finished runs");
    std::vector<std::string> audit_dirs;
    audit_cmd->add_option("dirs", audit_dirs, "run directories")->required();

    auto* report_cmd = app.add_subcommand("report", "compare finished runs (ratios vs the first)");
    std::vector<std::string> report_dirs;
    report_cmd->add_option("dirs", report_dirs, "run directories")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            if (!config_file.empty()) load_config_file(c, config_file);
            // explicit flags win over the config file
            if (run_cmd->count("--preset")) c.preset = preset_flag;
            if (run_cmd->count("--epochs")) c.hc.engine.epochs = epochs;
            if (run_cmd->count("--clients")) c.hc.corpus.n_clients = clients;
            if (run_cmd->count("--seed")) c.hc.seed = seed;
            if (run_cmd->count("--out")) c.hc.out_dir = out_flag;
            if (run_cmd->count("--theta")) c.hc.engine.theta0 = theta;
            if (!topology.empty() || !policy.empty()) {
                const std::string p = policy.empty() ? "fixed" : policy;
                const std::string t = topology.empty() ? "standard" : topology;
                c.preset = p + "_" + t + (int8 ? "Q" : "");
            } else if (int8 && c.preset.back() != 'Q') {
                c.preset += "Q";
            }
            if (dump) {
                std::cout << dump_config(c);
                return 0;
            }
            (void)run::preset_config(c.preset, c.hc.engine);  // fail fast on bad names
            auto r = run::run_preset(c.preset, c.hc);
            std::cout << "preset " << r.preset << "\nrun_dir " << r.run_dir << "\nfinal_val_ppl " << r.final_val_ppl
                      << "\ncomm_ratio_up " << r.comm_ratio_up << "\ncomm_ratio_total " << r.comm_ratio_total
                      << "\nwall_clock_s " << r.wall_clock_s << "\n";
            return 0;
        }
        if (audit_cmd->parsed()) return cmd_audit(audit_dirs);
        if (report_cmd->parsed()) {
            std::cout << run::compare_runs(report_dirs);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
