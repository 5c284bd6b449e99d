#include "cusprune/cli.hpp"

#include <filesystem>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "cusprune/bundle.hpp"
#include "cusprune/corpus.hpp"
#include "cusprune/error.hpp"
#include "cusprune/eval_harness.hpp"
#include "cusprune/log.hpp"
#include "cusprune/neuron_atlas.hpp"
#include "cusprune/prune_engine.hpp"
#include "cusprune/relevance.hpp"
#include "json.hpp"

namespace cusprune {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DimArg {
    std::string corpus;
    std::string dim;
};

struct Options {
    std::vector<std::string> models;
    std::vector<std::string> corpora;
    std::vector<std::string> dims;
    std::optional<double> sigma;
    std::optional<double> tau;
    std::size_t layers = 0;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string out;
    std::string plan;
    std::string mcq;
    std::size_t reps = 0;
    std::size_t max_tokens = 512;
    bool force_closest = false;
    std::string path;
};

// Pairs each --dim with the most recent preceding --corpus (or the first
// --corpus when the dim comes before any).
std::vector<DimArg> pair_dims(const CLI::App& sub, const Options& o) {
    std::vector<DimArg> out;
    std::size_t corpus_seen = 0, dim_seen = 0;
    std::optional<std::string> current;
    for (const CLI::Option* opt : sub.parse_order()) {
        if (opt->get_name() == "--corpus") {
            current = o.corpora.at(corpus_seen++);
        } else if (opt->get_name() == "--dim") {
            const std::string corpus = current ? *current : (o.corpora.empty() ? "" : o.corpora.front());
            out.push_back({corpus, o.dims.at(dim_seen++)});
        }
    }
    return out;
}

std::vector<DimensionCorpus> load_corpora(const std::vector<DimArg>& dims) {
    if (dims.empty()) throw ValidationError("at least one dimension required (--dim axis=value)");
    std::map<std::string, std::vector<Document>> cache;
    std::vector<DimensionCorpus> out;
    for (const auto& d : dims) {
        if (d.corpus.empty()) throw ValidationError("--dim " + d.dim + " has no --corpus");
        if (!cache.contains(d.corpus)) cache[d.corpus] = load_documents(d.corpus);
        DimensionCorpus c = build_dimension_corpus(cache[d.corpus], parse_dimension(d.dim));
        c.source = d.corpus;
        out.push_back(std::move(c));
    }
    if (out.size() > 3) throw ValidationError("at most three dimensions can be combined");
    return out;
}

ScoreConfig score_config(const Options& o) {
    ScoreConfig sc;
    sc.threads = std::max<std::size_t>(1, o.threads);
    sc.max_tokens_per_doc = o.max_tokens;
    if (o.tau) sc.tau = *o.tau;
    sc.validate();
    return sc;
}

std::string safe_label(std::string label) {
    for (char& c : label) {
        if (c == ':' || c == '/' || c == '\\' || c == ' ') c = '_';
    }
    return label;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ValidationError(msg);
}

int cmd_score(const CLI::App& sub, const Options& o, std::ostream& out) {
    require(o.models.size() == 1, "score takes exactly one --model");
    require(!o.out.empty(), "--out is required");
    const Bundle bundle = load_bundle(o.models.front());
    const auto corpora = load_corpora(pair_dims(sub, o));
    const ScoreConfig sc = score_config(o);
    const NeuronUniverse universe = enumerate_neurons(bundle.config);
    const auto dims = score_dimensions(bundle, corpora, universe, sc);
    fs::create_directories(o.out);
    std::vector<IrrelevantSet> sets;
    for (const auto& dim : dims) {
        const fs::path dir = fs::path(o.out) / safe_label(dim.label);
        fs::create_directories(dir);
        write_impacts(dim.impacts, dir / "impacts.bin");
        IrrelevantSet set = irrelevant_set(dim.impacts, universe, sc.tau);
        set.label = dim.label;
        set.corpus_id = dim.corpus_id;
        set.model_fingerprint = bundle.fingerprint;
        write_irrelevant_set(set, dir / "irrelevant.txt");
        out << dim.label << ": " << set.neurons.size() << " irrelevant neurons at tau " << sc.tau << "\n";
        sets.push_back(std::move(set));
    }
    const auto both = intersect_dimensions(sets);
    std::string text;
    for (const auto& id : both) text += id.str() + "\n";
    write_file_atomic(fs::path(o.out) / "intersection.txt", text);
    out << "intersection: " << both.size() << " neurons\n";
    return kExitOk;
}

int cmd_prune(const CLI::App& sub, const Options& o, std::ostream& out) {
    require(o.models.size() == 1, "prune takes exactly one --model");
    require(!o.out.empty(), "--out is required");
    const auto dim_args = pair_dims(sub, o);
    require(!dim_args.empty(), "at least one dimension required");
    require(o.sigma.has_value() || o.tau.has_value(), "--sigma or --tau is required");
    const Bundle bundle = load_bundle(o.models.front());
    const auto corpora = load_corpora(dim_args);
    ScoreConfig sc = score_config(o);
    CalibrationOptions co;
    co.force_closest = o.force_closest;
    PrunePlan plan;
    if (o.tau && !o.sigma) {
        require(o.layers == 0, "--layers needs --sigma");
        plan = plan_at_tau(bundle, corpora, *o.tau, sc);
    } else if (o.layers > 0) {
        plan = aggressive_plan(bundle, corpora, *o.sigma, o.layers, sc, co);
    } else {
        plan = calibrate(bundle, corpora, *o.sigma, sc, co);
    }
    write_plan(plan, o.out);
    out << "plan: " << plan.all_ids().size() << " units, achieved ratio " << plan.achieved_ratio << ", tau "
        << plan.tau << "\n";
    return kExitOk;
}

int cmd_apply(const Options& o, std::ostream& out) {
    require(o.models.size() == 1, "apply takes exactly one --model");
    require(!o.plan.empty(), "--plan is required");
    require(!o.out.empty(), "--out is required");
    const Bundle bundle = load_bundle(o.models.front());
    const PrunePlan plan = read_plan(o.plan);
    const PrunedModel pruned = apply_plan(bundle.config, bundle.weights, plan);
    save_bundle(pruned.config, pruned.weights, bundle.vocab, o.out);
    out << "wrote " << o.out << ": " << parameter_count(pruned.weights) << " parameters\n";
    return kExitOk;
}

TokenSeqs tokenize_docs(const Bundle& b, const std::vector<Document>& docs, std::size_t max_tokens) {
    TokenSeqs out;
    ScoreConfig sc;
    sc.max_tokens_per_doc = max_tokens;
    for (const auto& d : docs) out.push_back(document_tokens(b.vocab, d, sc, b.config));
    return out;
}

std::vector<McqItem> load_mcq(const Bundle& b, const std::string& path) {
    std::vector<McqItem> items;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            McqItem item;
            item.prompt = tokenize(b.vocab, j.at("prompt").get<std::string>());
            for (const auto& opt : j.at("options")) item.options.push_back(tokenize(b.vocab, opt.get<std::string>()));
            item.gold = j.at("gold").get<std::size_t>();
            require(item.gold < item.options.size(), "gold index out of range");
            items.push_back(std::move(item));
        } catch (const std::exception& e) {
            throw ValidationError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return items;
}

int cmd_eval(const CLI::App& sub, const Options& o, std::ostream& out) {
    require(o.models.size() == 2, "eval takes --model DENSE --model PRUNED");
    require(!o.out.empty(), "--out is required");
    const Bundle dense = load_bundle(o.models[0]);
    const Bundle pruned = load_bundle(o.models[1]);
    const auto dim_args = pair_dims(sub, o);
    require(!dim_args.empty(), "at least one dimension required to select expert documents");
    const auto corpora = load_corpora(dim_args);

    EvalInputs inputs;
    std::set<std::string> expert_ids;
    std::vector<Document> expert;
    for (const auto& c : corpora) {
        for (const auto& d : c.documents) {
            if (expert_ids.insert(d.id).second) expert.push_back(d);
        }
    }
    inputs.perplexity_sets["expert"] = tokenize_docs(dense, expert, o.max_tokens);
    std::vector<Document> general;
    for (const auto& file : o.corpora) {
        for (const auto& d : load_documents(file)) {
            if (!expert_ids.contains(d.id)) general.push_back(d);
        }
    }
    if (!general.empty()) inputs.perplexity_sets["general"] = tokenize_docs(dense, general, o.max_tokens);
    if (!o.mcq.empty()) inputs.mcq_sets["mcq"] = load_mcq(dense, o.mcq);
    if (o.reps > 0) {
        inputs.bench_docs = inputs.perplexity_sets["expert"];
        inputs.bench_repetitions = o.reps;
    }
    EvalReport report = expert_report(dense, pruned, inputs);
    report.plan_reference = o.plan;
    write_file_atomic(o.out, report.to_json());
    for (const auto& [name, r] : report.datasets) {
        out << name << " " << r.metric << ": dense " << r.dense << ", pruned " << r.pruned << ", retention "
            << r.retention_pct << "%\n";
    }
    return kExitOk;
}

int cmd_bench(const Options& o, std::ostream& out) {
    require(o.models.size() == 2, "bench takes --model DENSE --model PRUNED");
    require(!o.corpora.empty(), "--corpus is required");
    require(!o.out.empty(), "--out is required");
    const Bundle dense = load_bundle(o.models[0]);
    const Bundle pruned = load_bundle(o.models[1]);
    std::vector<Document> docs;
    for (const auto& file : o.corpora) {
        auto more = load_documents(file);
        docs.insert(docs.end(), more.begin(), more.end());
    }
    const TimingBlock t = bench_speed(dense.config, dense.weights, pruned.config, pruned.weights,
                                      tokenize_docs(dense, docs, o.max_tokens), o.reps ? o.reps : 5);
    write_file_atomic(o.out, timing_to_json(t));
    out << "speedup " << t.speedup << " (flop ratio " << t.flop_ratio << ")\n";
    return kExitOk;
}

int cmd_inspect(const Options& o, std::ostream& out) {
    require(!o.path.empty(), "inspect needs a bundle directory or plan file");
    if (fs::is_directory(o.path)) {
        const Bundle b = load_bundle(o.path);
        const auto& c = b.config;
        out << "bundle: " << o.path << "\n";
        out << "fingerprint: " << b.fingerprint << "\n";
        out << "layers: " << c.n_layers << ", d_model: " << c.d_model << ", vocab: " << c.vocab_size << "\n";
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            const LayerShape s = c.layer_shape(l);
            out << "  layer " << l << ": d_ff " << s.d_ff << ", heads " << s.n_heads() << ", v_total "
                << s.v_total() << "\n";
        }
        out << "parameters: " << parameter_count(b.weights) << "\n";
        const auto universe = enumerate_neurons(c);
        out << "prunable parameters: " << universe.prunable_parameters() << "\n";
        return kExitOk;
    }
    const PrunePlan plan = read_plan(o.path);
    out << "plan: " << o.path << "\n";
    out << "fingerprint: " << plan.fingerprint << "\n";
    if (plan.sigma) out << "sigma: " << *plan.sigma << "\n";
    out << "tau: " << plan.tau << "\n";
    out << "achieved ratio: " << plan.achieved_ratio << "\n";
    for (const auto& phase : plan.phases) out << "phase " << phase.kind << ": " << phase.ids.size() << " units\n";
    out << "removed parameters: " << plan.removed_parameters << " of " << plan.total_parameters << "\n";
    for (const auto& p : plan.provenance) {
        out << "  " << p.label << " (" << p.corpus_id << "): " << p.documents << " documents, irrelevant set "
            << p.set_size << "\n";
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Corpus-driven structured pruning for decoder-only transformers", "cusprune"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--threads", o.threads, "Worker threads for scoring")->check(CLI::PositiveNumber);
        sub->add_option("--seed", o.seed, "Seed (recorded for reproducibility)");
        sub->add_option("--max-tokens", o.max_tokens, "Tokens kept per document")->check(CLI::PositiveNumber);
    };
    auto add_dims = [&](CLI::App* sub) {
        sub->add_option("--corpus", o.corpora, "JSONL document file (applies to following --dim)")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        sub->add_option("--dim,--dimension", o.dims, "Fixed axis, e.g. lang=de or domain=medical,task=mcq")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    };

    auto* score = app.add_subcommand("score", "Score neuron impacts and write irrelevant sets");
    score->add_option("--model", o.models)->required();
    add_dims(score);
    score->add_option("--tau", o.tau, "Irrelevance percentile (default 25)");
    score->add_option("--out", o.out)->required();
    add_common(score);

    auto* prune = app.add_subcommand("prune", "Compute a pruning plan");
    prune->add_option("--model", o.models)->required();
    add_dims(prune);
    prune->add_option("--sigma", o.sigma, "Target fraction of parameters to remove");
    prune->add_option("--tau", o.tau, "Fixed percentile; skips calibration");
    prune->add_option("--layers", o.layers, "Remove this many whole layers first");
    prune->add_flag("--force-closest", o.force_closest, "Accept the closest ratio when the tolerance is missed");
    prune->add_option("--out", o.out)->required();
    add_common(prune);

    auto* apply = app.add_subcommand("apply", "Apply a plan and write the pruned bundle");
    apply->add_option("--model", o.models)->required();
    apply->add_option("--plan", o.plan)->required();
    apply->add_option("--out", o.out)->required();
    add_common(apply);

    auto* eval = app.add_subcommand("eval", "Compare dense and pruned bundles");
    eval->add_option("--model", o.models, "Dense bundle, then pruned bundle")->required();
    add_dims(eval);
    eval->add_option("--mcq", o.mcq, "JSONL of {prompt, options, gold}");
    eval->add_option("--plan", o.plan, "Plan file recorded in the report");
    eval->add_option("--reps", o.reps, "Timing repetitions (0 = skip timing)");
    eval->add_option("--out", o.out)->required();
    add_common(eval);

    auto* bench = app.add_subcommand("bench", "Time dense vs pruned forward passes");
    bench->add_option("--model", o.models, "Dense bundle, then pruned bundle")->required();
    add_dims(bench);
    bench->add_option("--reps", o.reps, "Repetitions (default 5)");
    bench->add_option("--out", o.out)->required();
    add_common(bench);

    auto* inspect = app.add_subcommand("inspect", "Summarize a bundle or plan");
    inspect->add_option("path", o.path)->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitValidation;
    }

    try {
        if (score->parsed()) return cmd_score(*score, o, out);
        if (prune->parsed()) return cmd_prune(*prune, o, out);
        if (apply->parsed()) return cmd_apply(o, out);
        if (eval->parsed()) return cmd_eval(*eval, o, out);
        if (bench->parsed()) return cmd_bench(o, out);
        if (inspect->parsed()) return cmd_inspect(o, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}

}  // namespace cusprune
