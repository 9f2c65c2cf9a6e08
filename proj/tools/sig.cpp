// sig: train, evaluate and explain link predictors on event CSVs.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sig/sig.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flags shared by the commands that build a model or a dataset. Only flags
// actually given on the command line override the config file.
struct ModelFlags {
    std::string config;
    std::uint64_t seed = 0;
    double lambda_i = 0, lambda_t = 0, lambda_s = 0;
    std::size_t k_confounders = 0, recent_n = 0, hops = 0, hidden = 0, epochs = 0, batch = 0, neg_ratio = 0;
    std::vector<std::pair<CLI::Option*, std::function<void(sig::RunConfig&)>>> given;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "key=value config file (flags override it)")->check(CLI::ExistingFile);
        bind(app->add_option("--seed", seed, "random seed"), [this](sig::RunConfig& c) { c.train.seed = seed; });
        bind(app->add_option("--lambda-i", lambda_i, "weight of the ICM risk"),
             [this](sig::RunConfig& c) { c.model.lambda.iid = lambda_i; });
        bind(app->add_option("--lambda-t", lambda_t, "weight of the temporal intervention risk"),
             [this](sig::RunConfig& c) { c.model.lambda.temporal = lambda_t; });
        bind(app->add_option("--lambda-s", lambda_s, "weight of the structural intervention risk"),
             [this](sig::RunConfig& c) { c.model.lambda.structural = lambda_s; });
        bind(app->add_option("--k-confounders", k_confounders, "confounder dictionary size"),
             [this](sig::RunConfig& c) { c.model.k_confounders = k_confounders; });
        bind(app->add_option("--recent-n", recent_n, "recent edges per node (N)"),
             [this](sig::RunConfig& c) { c.model.recent_n = recent_n; });
        bind(app->add_option("--hops", hops, "structural neighbourhood hops"),
             [this](sig::RunConfig& c) { c.model.hops = hops; });
        bind(app->add_option("--hidden", hidden, "hidden width"), [this](sig::RunConfig& c) { c.model.hidden = hidden; });
        bind(app->add_option("--epochs", epochs, "maximum epochs"), [this](sig::RunConfig& c) { c.train.epochs = epochs; });
        bind(app->add_option("--batch", batch, "positives per optimizer step"),
             [this](sig::RunConfig& c) { c.train.batch_size = batch; });
        bind(app->add_option("--neg-ratio", neg_ratio, "training negatives per positive"),
             [this](sig::RunConfig& c) { c.train.neg_ratio_train = neg_ratio; });
    }

    void bind(CLI::Option* o, std::function<void(sig::RunConfig&)> f) { given.emplace_back(o, std::move(f)); }

    sig::RunConfig resolve() const {
        sig::RunConfig c;
        if (!config.empty()) sig::apply_config_file(c, config);
        for (const auto& [opt, apply] : given)
            if (opt->count() > 0) apply(c);
        try {
            c.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

constexpr const char* kCheckpointName = "checkpoint.sig";

std::map<std::string, double> data_meta(const sig::RunConfig& c) {
    return {
        {"seed", double(c.train.seed)},
        {"train_frac", c.data.train_frac},
        {"val_frac", c.data.val_frac},
        {"one_hot_cap", double(c.data.one_hot_cap)},
        {"landmarks", double(c.data.landmarks)},
        {"bipartite", c.data.bipartite ? 1.0 : 0.0},
        {"neg_ratio_eval", double(c.train.neg_ratio_eval)},
        {"eval_batch", double(c.train.eval_batch)},
    };
}

// Data settings recorded at training time; the model comes from the
// checkpoint itself.
sig::RunConfig config_from_meta(const std::map<std::string, double>& meta) {
    sig::RunConfig c;
    auto get = [&](const char* k, double fallback) {
        auto it = meta.find(k);
        return it == meta.end() ? fallback : it->second;
    };
    c.train.seed = std::uint64_t(get("seed", double(c.train.seed)));
    c.data.train_frac = get("train_frac", c.data.train_frac);
    c.data.val_frac = get("val_frac", c.data.val_frac);
    c.data.one_hot_cap = std::size_t(get("one_hot_cap", double(c.data.one_hot_cap)));
    c.data.landmarks = std::size_t(get("landmarks", double(c.data.landmarks)));
    c.data.bipartite = get("bipartite", 0.0) != 0.0;
    c.train.neg_ratio_eval = std::size_t(get("neg_ratio_eval", double(c.train.neg_ratio_eval)));
    c.train.eval_batch = std::size_t(get("eval_batch", double(c.train.eval_batch)));
    return c;
}

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

int cmd_train(const std::string& data, const std::string& out, const ModelFlags& flags) {
    const sig::RunConfig cfg = flags.resolve();
    const sig::EventStore raw = sig::load_events(data, {cfg.data.bipartite});
    const sig::LinkDataset ds = sig::prepare_dataset(raw, cfg);
    sig::SigModel model = sig::make_model(ds.store, cfg.model, cfg.train.seed);
    fs::create_directories(out);

    sig::RunConfig echo = cfg;
    echo.model.window = model.config().window;
    {
        std::ofstream f(fs::path(out) / "config.txt");
        f << "# resolved configuration\n";
        sig::write_config(f, echo);
        f << "# data\n# events = " << raw.edge_count() << "\n# nodes = " << raw.node_count() << "\n";
    }
    std::ofstream metrics(fs::path(out) / "metrics.tsv", std::ios::trunc);
    const sig::TrainResult res = sig::train(model, ds, cfg.train, [&](const sig::EpochRecord& r) {
        metrics << r.epoch << '\t' << fmt(r.train_loss) << '\t' << fmt(r.val_ap) << '\t' << fmt(r.val_auc) << '\n';
        metrics.flush();
        std::cerr << "epoch " << r.epoch << "  loss " << r.train_loss << "  val_ap " << r.val_ap << "  val_auc "
                  << r.val_auc << "  (" << r.seconds << " s)\n";
    });

    auto meta = data_meta(cfg);
    meta["best_val_ap"] = res.best_val_ap;
    meta["best_epoch"] = double(res.best_epoch);
    sig::save_model(fs::path(out) / kCheckpointName, model, meta);

    const auto test = sig::evaluate(model, ds.store, ds.test, ds.test_labels, cfg.train.eval_batch);
    std::cout << "best_epoch\t" << res.best_epoch << "\nbest_val_ap\t" << fmt(res.best_val_ap) << "\ntest_ap\t"
              << fmt(test.ap) << "\ntest_auc\t" << fmt(test.auc) << "\ncheckpoint\t"
              << (fs::path(out) / kCheckpointName).string() << "\n";
    return 0;
}

fs::path checkpoint_path(const std::string& p) {
    fs::path c(p);
    return fs::is_directory(c) ? c / kCheckpointName : c;
}

int cmd_eval(const std::string& data, const std::string& checkpoint) {
    sig::LoadedModel lm = sig::load_model(checkpoint_path(checkpoint));
    const sig::RunConfig cfg = config_from_meta(lm.meta);
    const sig::LinkDataset ds = sig::prepare_dataset(sig::load_events(data, {cfg.data.bipartite}), cfg);
    const auto val = sig::evaluate(lm.model, ds.store, ds.val, ds.val_labels, cfg.train.eval_batch);
    const auto test = sig::evaluate(lm.model, ds.store, ds.test, ds.test_labels, cfg.train.eval_batch);
    std::cout << "val_ap\t" << fmt(val.ap) << "\nval_auc\t" << fmt(val.auc) << "\ntest_ap\t" << fmt(test.ap)
              << "\ntest_auc\t" << fmt(test.auc) << "\n";
    if (auto it = lm.meta.find("best_val_ap"); it != lm.meta.end())
        std::cout << "recorded_val_ap\t" << fmt(it->second) << "\nreproduced\t" << (it->second == val.ap ? "yes" : "no")
                  << "\n";
    return 0;
}

std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("--sparsity: '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw UsageError("--sparsity: empty grid");
    return out;
}

int cmd_explain(const std::string& data, const std::string& checkpoint, const std::string& sparsity,
                const std::string& out, std::size_t max_queries) {
    const auto grid = parse_grid(sparsity);
    sig::LoadedModel lm = sig::load_model(checkpoint_path(checkpoint));
    const sig::RunConfig cfg = config_from_meta(lm.meta);
    sig::LinkDataset ds = sig::prepare_dataset(sig::load_events(data, {cfg.data.bipartite}), cfg);
    if (max_queries > 0 && ds.test.size() > max_queries) {
        ds.test.resize(max_queries);
        ds.test_labels.resize(max_queries);
    }
    const auto curve = sig::fidelity_curve(lm.model, ds.store, ds.test, ds.test_labels, grid, cfg.train.eval_batch);
    std::cout << "sparsity\tfidelity\n";
    for (std::size_t i = 0; i < curve.sparsity.size(); ++i)
        std::cout << fmt(curve.sparsity[i]) << '\t' << fmt(curve.fidelity[i]) << '\n';
    std::cout << "ap_full\t" << fmt(curve.ap_full) << '\n';
    if (curve.sparsity.size() >= 2)
        std::cout << "aufsc\t" << fmt(curve.aufsc) << "\naufsc_raw\t" << fmt(curve.aufsc_raw) << '\n';
    if (!out.empty()) {
        const auto records = sig::explain_queries(lm.model, ds.store, ds.test, cfg.train.eval_batch);
        sig::export_explanations(records, out);
        std::cerr << "wrote " << records.size() << " explanations to " << out << '\n';
    }
    return 0;
}

int cmd_oodgen(const std::string& data, const std::string& out, double scale, std::uint64_t seed, bool bipartite) {
    const sig::EventStore store = sig::load_events(data, {bipartite});
    std::mt19937_64 rng(seed);
    const sig::OodInjection inj = sig::ood_inject(store, scale, rng);
    sig::write_events_csv(fs::path(out), inj.store.events());
    std::cerr << "added " << inj.added << " events (" << inj.to_neighbors << " to existing neighbours)\n";
    return 0;
}

int cmd_synth(const std::string& out, const std::string& queries_out, sig::PlantedConfig pc) {
    const sig::PlantedDataset d = sig::planted_pattern_generate(pc);
    sig::write_events_csv(fs::path(out), d.store.events());
    if (!queries_out.empty()) {
        std::ofstream q(queries_out);
        if (!q) throw std::runtime_error("cannot open " + queries_out);
        q << "src\tdst\tt0\tlabel\trole\tdecoy\n";
        for (const auto& lq : d.queries) {
            const char* role = lq.role == sig::Role::train ? "train" : lq.role == sig::Role::val ? "val" : "test";
            q << lq.query.src << '\t' << lq.query.dst << '\t' << fmt(lq.query.t0) << '\t' << lq.label << '\t' << role
              << '\t' << int(lq.decoy) << '\n';
        }
    }
    std::cout << "events\t" << d.store.edge_count() << "\nnodes\t" << d.store.node_count() << "\nqueries\t"
              << d.queries.size() << "\ntrain_decoy_corr\t" << fmt(d.train_decoy_corr) << "\ntest_decoy_corr\t"
              << fmt(d.test_decoy_corr) << '\n';
    return 0;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed) {
    const auto suite = sig::run_gradcheck_suite(instances, seed);
    bool ok = true;
    std::printf("%-22s %9s %7s %8s %12s\n", "operation", "instances", "failed", "redrawn", "worst_rel");
    for (const auto& e : suite) {
        std::printf("%-22s %9zu %7zu %8zu %12.3e\n", e.name.c_str(), e.instances, e.failed, e.redrawn, e.worst);
        if (e.failed > 0) {
            ok = false;
            std::fprintf(stderr, "%s: %s\n", e.name.c_str(), e.first_failure.c_str());
        }
    }
    if (!ok) throw std::runtime_error("gradient check failed");
    return 0;
}

int cmd_bench(const std::string& data, const std::string& ns_text, std::size_t hidden, std::size_t n_queries,
              std::size_t repeats, std::uint64_t seed) {
    std::vector<std::size_t> ns;
    for (double v : parse_grid(ns_text)) {
        if (!(v >= 1) || v != std::floor(v)) throw UsageError("--n: expected positive integers");
        ns.push_back(std::size_t(v));
    }
    sig::EventStore store;
    std::vector<sig::Query> queries;
    if (data.empty()) {
        sig::PlantedConfig pc;
        pc.seed = seed;
        const sig::PlantedDataset d = sig::planted_pattern_generate(pc);
        store = d.store;
        for (const auto& q : d.queries)
            if (q.role == sig::Role::test) queries.push_back(q.query);
    } else {
        sig::RunConfig c;
        c.train.seed = seed;
        const sig::LinkDataset ds = sig::prepare_dataset(sig::load_events(data), c);
        store = ds.store;
        queries = ds.test;
    }
    if (queries.size() > n_queries) queries.resize(n_queries);
    sig::SigConfig base;
    base.hidden = hidden;
    const auto res = sig::bench_throughput(store, queries, ns, base, repeats, seed);
    std::cout << "N\tper_edge_us\n";
    for (const auto& p : res.points) std::cout << p.n << '\t' << fmt(p.per_edge_us) << '\n';
    std::cout << "intercept_us\t" << fmt(res.intercept) << "\nslope_us_per_N\t" << fmt(res.slope) << "\nr2\t"
              << fmt(res.r2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-interpretable link prediction on continuous-time dynamic graphs"};
    app.require_subcommand(1);

    std::string data, out, checkpoint, sparsity = "0.2,0.4,0.6,0.8,1.0", queries_out, rule = "triadic_closure",
                                       ns = "10,20,40,80";
    double scale = 0.6;
    std::uint64_t seed = 1;
    std::size_t max_queries = 0, instances = 100, hidden = 100, n_queries = 500, repeats = 3;
    sig::PlantedConfig pc;
    bool ood = false, bipartite = false;

    ModelFlags train_flags;
    auto* train = app.add_subcommand("train", "train a model; writes checkpoint, metrics.tsv and config.txt");
    train->add_option("--data", data, "event CSV")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out, "run directory")->required();
    train_flags.attach(train);

    auto* eval = app.add_subcommand("eval", "AP/AUC of a checkpoint on the validation and test splits");
    eval->add_option("--data", data, "event CSV")->required()->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file or run directory")->required()->check(CLI::ExistingPath);

    auto* explain = app.add_subcommand("explain", "fidelity-sparsity curve and explanation export");
    explain->add_option("--data", data, "event CSV")->required()->check(CLI::ExistingFile);
    explain->add_option("--checkpoint", checkpoint, "checkpoint file or run directory")->required()->check(CLI::ExistingPath);
    explain->add_option("--sparsity", sparsity, "comma-separated sparsity grid");
    explain->add_option("--out", out, "JSONL file for per-query explanations");
    explain->add_option("--max-queries", max_queries, "use only the first K test queries (0 = all)");

    auto* oodgen = app.add_subcommand("oodgen", "inject intervention edges into an event CSV");
    oodgen->add_option("--data", data, "event CSV")->required()->check(CLI::ExistingFile);
    oodgen->add_option("--out", out, "output CSV")->required();
    oodgen->add_option("--scale", scale, "fraction of injected edges that hit existing neighbours")
        ->check(CLI::Range(0.0, 1.0));
    oodgen->add_option("--seed", seed, "random seed");
    oodgen->add_flag("--bipartite", bipartite, "ids of the second column start at 0 independently");

    auto* synth = app.add_subcommand("synth", "generate a planted-pattern dataset");
    synth->add_option("--out", out, "output CSV")->required();
    synth->add_option("--queries", queries_out, "TSV of labelled queries");
    synth->add_option("--seed", pc.seed, "random seed");
    synth->add_option("--rule", rule, "planted causal pattern")
        ->check(CLI::IsMember({"triadic_closure", "recency_burst"}));
    synth->add_option("--nodes", pc.nodes, "node count");
    synth->add_option("--events", pc.events, "approximate event count");
    synth->add_option("--patterns", pc.patterns, "planted positives");
    synth->add_flag("--ood", ood, "decorrelate the decoy in the test slice");

    auto* gradcheck = app.add_subcommand("gradcheck", "reverse-mode vs finite-difference gradients");
    gradcheck->add_option("--instances", instances, "random instances per operation");
    gradcheck->add_option("--seed", seed, "random seed");

    auto* bench = app.add_subcommand("bench", "inference latency per edge as a function of N");
    bench->add_option("--data", data, "event CSV (default: planted dataset)")->check(CLI::ExistingFile);
    bench->add_option("--n", ns, "comma-separated history lengths");
    bench->add_option("--hidden", hidden, "hidden width");
    bench->add_option("--queries", n_queries, "queries timed per N");
    bench->add_option("--repeats", repeats, "timed passes per N (best is kept)");
    bench->add_option("--seed", seed, "random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*train) return cmd_train(data, out, train_flags);
        if (*eval) return cmd_eval(data, checkpoint);
        if (*explain) return cmd_explain(data, checkpoint, sparsity, out, max_queries);
        if (*oodgen) return cmd_oodgen(data, out, scale, seed, bipartite);
        if (*synth) {
            pc.rule = sig::parse_rule(rule);
            pc.ood = ood;
            return cmd_synth(out, queries_out, pc);
        }
        if (*gradcheck) return cmd_gradcheck(instances, seed);
        if (*bench) return cmd_bench(data, ns, hidden, n_queries, repeats, seed);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const sig::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
