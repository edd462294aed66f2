// polymotion: data generation, training, sampling, evaluation and the
// Gaussian factorization check behind one entry point.
#include "polymotion/evaluation.hpp"
#include "polymotion/sampler.hpp"
#include "polymotion/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace polymotion;

namespace {

enum Exit { kOk = 0, kValidation = 2, kIo = 3, kNumerical = 4 };

// Flat JSON object -> CLI11 config items; keys are long option names.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        std::vector<CLI::ConfigItem> items;
        for (auto it = j.begin(); it != j.end(); ++it) {
            CLI::ConfigItem item;
            item.name = it.key();
            const json& v = it.value();
            if (v.is_array()) {
                for (const auto& e : v) item.inputs.push_back(e.is_string() ? e.get<std::string>() : e.dump());
            } else if (v.is_string()) {
                item.inputs = {v.get<std::string>()};
            } else if (v.is_boolean()) {
                item.inputs = {v.get<bool>() ? "true" : "false"};
            } else if (v.is_number()) {
                item.inputs = {v.dump()};
            } else {
                throw CLI::ConversionError("config key '" + it.key() + "' has an unsupported value");
            }
            items.push_back(std::move(item));
        }
        return items;
    }
};

struct RunDir {
    fs::path root;

    fs::path config() const { return root / "config.resolved.json"; }
    fs::path log() const { return root / "log.csv"; }
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path outputs() const { return root / "outputs"; }

    // Refuses to touch existing artifacts unless `overwrite`, then clears them.
    void prepare(bool overwrite) const {
        const fs::path owned[] = {config(), log(), checkpoints(), outputs()};
        for (const auto& p : owned) {
            if (!fs::exists(p)) continue;
            if (!overwrite) throw InvalidArgument("run directory already holds " + p.string() + " (use --overwrite)");
        }
        std::error_code ec;
        for (const auto& p : owned) fs::remove_all(p, ec);
        fs::create_directories(outputs(), ec);
        if (ec) throw IoError("cannot create " + outputs().string() + ": " + ec.message());
        fs::create_directories(checkpoints(), ec);
        if (ec) throw IoError("cannot create " + checkpoints().string() + ": " + ec.message());
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void require_exists(const fs::path& p) {
    if (!fs::exists(p)) throw InvalidArgument("missing prerequisite: " + p.string());
}

// A checkpoint directory, or a run directory whose final checkpoint is used.
fs::path resolve_checkpoint(const fs::path& p) {
    require_exists(p);
    if (fs::exists(p / "manifest.json")) return p;
    const fs::path inner = p / "checkpoints" / "final";
    require_exists(inner / "manifest.json");
    return inner;
}

// A dataset file, or a data run directory plus the split file name.
fs::path resolve_dataset(const fs::path& p, const std::string& file) {
    require_exists(p);
    if (fs::is_regular_file(p)) return p;
    for (const fs::path& c : {p / file, p / "outputs" / file})
        if (fs::exists(c)) return c;
    throw InvalidArgument("missing prerequisite: " + (p / "outputs" / file).string());
}

class LogCsv {
public:
    explicit LogCsv(const fs::path& path) : out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
        out_ << "epoch,step,total,rec,foot,vel,bone,dm\n";
    }
    void operator()(const LogRow& r) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%d,%ld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.step, r.loss.total,
                      r.loss.rec, r.loss.foot, r.loss.vel, r.loss.bone, r.loss.dm);
        out_ << buf;
        out_.flush();
        std::fprintf(stderr, "epoch %d step %ld loss %.5g\n", r.epoch, r.step, r.loss.total);
    }

private:
    std::ofstream out_;
};

json dims_json(const NetDims& d) {
    return {{"pose_dim", d.pose_dim}, {"joints", d.joints}, {"hidden", d.hidden}, {"heads", d.heads},
            {"blocks", d.blocks},     {"max_frames", d.max_frames}, {"text_dim", d.text_dim}};
}

// ------------------------------------------------------------------ gen-data

struct GenDataOpts {
    std::string run;
    bool overwrite = false;
    GeneratorConfig gen;
    int eval_samples = 50;
};

int cmd_gen_data(const GenDataOpts& o) {
    o.gen.validate();
    if (o.eval_samples < 0) throw InvalidArgument("eval-samples must be >= 0");
    const RunDir run{o.run};
    run.prepare(o.overwrite);

    const auto records = generate_dataset(o.gen);
    write_dataset(run.outputs() / "train.jsonl", filter_split(records, Split::train));
    write_dataset(run.outputs() / "test.jsonl", filter_split(records, Split::test));
    json counts = {{"train.jsonl", filter_split(records, Split::train).size()},
                   {"test.jsonl", filter_split(records, Split::test).size()}};
    for (int n : {3, 4}) {
        GeneratorConfig g = o.gen;
        g.n_persons = n;
        g.n_samples = o.eval_samples;
        g.force_split = Split::test;
        g.seed = mix_seed(o.gen.seed, static_cast<std::uint64_t>(n));
        g.id_prefix = "n" + std::to_string(n) + "_";
        const std::string name = "n" + std::to_string(n) + ".jsonl";
        if (o.eval_samples > 0) write_dataset(run.outputs() / name, generate_dataset(g));
        counts[name] = o.eval_samples;
    }
    json weights = json::object();
    for (const auto& [k, v] : o.gen.pattern_weights) weights[k] = v;
    write_json(run.config(), {{"command", "gen-data"},
                              {"seed", o.gen.seed},
                              {"n_samples", o.gen.n_samples},
                              {"frames", o.gen.frames},
                              {"n_persons", o.gen.n_persons},
                              {"skeleton", o.gen.skeleton},
                              {"train_fraction", o.gen.train_fraction},
                              {"pattern_weights", weights},
                              {"eval_samples", o.eval_samples},
                              {"counts", counts}});
    std::string log = "file,records\n";
    for (const auto& [name, n] : counts.items()) log += name + "," + n.dump() + "\n";
    write_text(run.log(), log);
    std::printf("wrote %s\n", run.outputs().c_str());
    return kOk;
}

// --------------------------------------------------------------------- train

struct TrainOpts {
    std::string run, data, init, text_overrides, stage = "1", schedule = "cosine", text_mode = "interactive";
    bool overwrite = false;
    TrainConfig cfg;
    bool reconstruction_only = false;
};

int cmd_train(TrainOpts o) {
    const Stage stage = parse_stage(o.stage);
    TrainConfig cfg = o.cfg;
    cfg.stage = stage;
    cfg.schedule = parse_schedule_kind(o.schedule);
    cfg.text_mode = parse_text_mode(o.text_mode);
    if (o.reconstruction_only) cfg.weights = LossWeights::reconstruction_only();
    cfg.validate();
    const fs::path data = resolve_dataset(o.data, "train.jsonl");
    std::optional<fs::path> init;
    if (stage != Stage::one) {
        if (o.init.empty()) throw InvalidArgument("--init is required for stage " + o.stage);
        init = resolve_checkpoint(o.init);
    }
    if (!o.text_overrides.empty()) require_exists(o.text_overrides);

    const RunDir run{o.run};
    run.prepare(o.overwrite);
    auto records = read_dataset(data);
    if (!o.text_overrides.empty()) apply_text_overrides(records, o.text_overrides);
    const auto items = to_train_items(filter_split(records, Split::train));
    if (items.empty()) throw InvalidDataset("no training records in " + data.string());

    LogCsv log(run.log());
    TrainResult res;
    Model base;
    if (init) base = model_from_checkpoint(load_checkpoint(*init));
    NetDims dims = stage == Stage::one ? cfg.dims : base.dims;
    if (stage == Stage::one) {
        const int joints = records.front().motions.front().joints();
        const SkeletonDef skel = records.front().motions.front().skeleton;
        cfg.dims.pose_dim = pose_dim(joints);
        cfg.dims.joints = joints;
        dims = cfg.dims;
        res = train_stage1(items, skel, cfg, std::ref(log));
    } else if (stage == Stage::two) {
        res = train_stage2(items, base, cfg, std::ref(log));
    } else {
        res = train_spatial(items, base, cfg, std::ref(log));
    }

    json resolved = {{"command", "train"},
                     {"stage", to_string(stage)},
                     {"data", data.string()},
                     {"init", init ? init->string() : ""},
                     {"text_overrides", o.text_overrides},
                     {"epochs", cfg.epochs},
                     {"max_steps", cfg.max_steps},
                     {"batch_size", cfg.batch_size},
                     {"lr", cfg.learning_rate},
                     {"weight_decay", cfg.weight_decay},
                     {"lr_cosine_decay", cfg.lr_cosine_decay},
                     {"diffusion_steps", cfg.diffusion_steps},
                     {"schedule", o.schedule},
                     {"seed", cfg.seed},
                     {"w_foot", cfg.weights.foot},
                     {"w_vel", cfg.weights.velocity},
                     {"w_bone", cfg.weights.bone},
                     {"w_dm", cfg.weights.distance_map},
                     {"dm_threshold", cfg.weights.dm_threshold},
                     {"text_dropout", cfg.text_dropout},
                     {"condition_keep", cfg.condition_keep},
                     {"text_mode", to_string(cfg.text_mode)},
                     {"frame_keep", cfg.spatial_frame_keep},
                     {"log_every", cfg.log_every},
                     {"dims", dims_json(dims)}};
    Checkpoint ckpt = to_checkpoint(res.model, to_string(stage));
    ckpt.config_hash = sha256_hex(resolved.dump());
    ckpt.rng_state = res.rng_state;
    save_checkpoint(run.checkpoints() / "final", ckpt);
    resolved["steps"] = res.steps;
    resolved["seconds"] = res.seconds;
    write_json(run.config(), resolved);
    std::printf("stage %s: %ld steps in %.1f s -> %s\n", to_string(stage).c_str(), res.steps, res.seconds,
                (run.checkpoints() / "final").c_str());
    return kOk;
}

// ----------------------------------------------------------- train-evaluator

struct EvaluatorOpts {
    std::string run, data;
    bool overwrite = false;
    EvaluatorConfig cfg;
};

int cmd_train_evaluator(const EvaluatorOpts& o) {
    o.cfg.validate();
    const fs::path data = resolve_dataset(o.data, "train.jsonl");
    const RunDir run{o.run};
    run.prepare(o.overwrite);
    const auto records = filter_split(read_dataset(data), Split::train);
    if (records.size() < 2) throw InvalidDataset("evaluator needs at least two training records");
    std::vector<Mat> motions;
    std::vector<std::string> texts;
    for (const auto& r : records) {
        std::vector<Mat> ms;
        for (const auto& m : r.motions) ms.push_back(m.data);
        motions.push_back(pair_features(ms));
        texts.push_back(r.text_interactive);
    }
    const TextEmbedder te;
    LogCsv log(run.log());
    const Evaluator ev = train_evaluator(motions, texts, te, o.cfg, std::ref(log));
    save_checkpoint(run.checkpoints() / "final", ev.to_checkpoint());
    write_json(run.config(), {{"command", "train-evaluator"},
                              {"data", data.string()},
                              {"embed_dim", o.cfg.embed_dim},
                              {"hidden", o.cfg.hidden},
                              {"text_hidden", o.cfg.text_hidden},
                              {"epochs", o.cfg.epochs},
                              {"batch_size", o.cfg.batch_size},
                              {"lr", o.cfg.learning_rate},
                              {"temperature", o.cfg.temperature},
                              {"seed", o.cfg.seed}});
    return kOk;
}

// -------------------------------------------------------------------- sample

struct SampleOpts {
    std::string run, checkpoint;
    bool overwrite = false;
    int num_persons = 1;
    std::vector<std::string> texts, interaction_texts;
    std::vector<std::string> spatial;
    GenerationRequest req;
    bool no_explicit = false, no_implicit = false;
};

json motion_json(const MotionSeq& m) {
    json rows = json::array();
    for (Eigen::Index f = 0; f < m.data.rows(); ++f) {
        std::vector<double> row(m.data.row(f).data(), m.data.row(f).data() + m.data.cols());
        rows.push_back(row);
    }
    return {{"frames", m.frames()}, {"joints", m.joints()}, {"features", rows}};
}

int cmd_sample(const SampleOpts& o) {
    if (o.num_persons < 1) throw InvalidArgument("num-persons must be >= 1");
    if (o.texts.size() != 1 && static_cast<int>(o.texts.size()) != o.num_persons)
        throw InvalidArgument("give one --text, or one per person (" + std::to_string(o.num_persons) + ")");
    if (o.interaction_texts.size() > 1 && static_cast<int>(o.interaction_texts.size()) != o.num_persons)
        throw InvalidArgument("give one --interaction-text, or one per person");
    if (static_cast<int>(o.spatial.size()) > o.num_persons) throw InvalidArgument("more --spatial files than persons");
    const fs::path ckpt = resolve_checkpoint(o.checkpoint);
    for (const auto& s : o.spatial)
        if (s != "none") require_exists(s);

    GenerationRequest req = o.req;
    req.texts = o.texts.size() == 1 ? std::vector<std::string>(o.num_persons, o.texts.front()) : o.texts;
    if (!o.interaction_texts.empty())
        req.interaction_texts = o.interaction_texts.size() == 1
                                    ? std::vector<std::string>(o.num_persons, o.interaction_texts.front())
                                    : o.interaction_texts;
    req.explicit_guidance = !o.no_explicit;
    req.implicit_guidance = !o.no_implicit;
    for (const auto& s : o.spatial)
        req.spatial.push_back(s == "none" ? std::nullopt : std::optional<SpatialSignal>(read_spatial_json(s)));
    const Model model = model_from_checkpoint(load_checkpoint(ckpt));
    req.validate(model);

    const RunDir run{o.run};
    run.prepare(o.overwrite);
    const auto motions = sample_multi(model, req);
    for (std::size_t p = 0; p < motions.size(); ++p)
        write_json(run.outputs() / ("person_" + std::to_string(p + 1) + ".json"), motion_json(motions[p]));
    write_trajectory_csv(run.outputs() / "trajectories.csv", motions);
    write_text(run.log(), "person,frames,valid_structural,valid_full\n");
    {
        std::ofstream log(run.log(), std::ios::app);
        for (std::size_t p = 0; p < motions.size(); ++p)
            log << p + 1 << ',' << motions[p].frames() << ',' << is_valid(motions[p], Validation::structural) << ',' << is_valid(motions[p], Validation::full)
                << '\n';
    }
    write_json(run.config(), {{"command", "sample"},
                              {"checkpoint", ckpt.string()},
                              {"num_persons", o.num_persons},
                              {"texts", req.texts},
                              {"interaction_texts", req.interaction_texts},
                              {"spatial", o.spatial},
                              {"frames", req.frames},
                              {"seed", req.seed},
                              {"guidance_scale", req.guidance_scale},
                              {"steps", req.inference_steps},
                              {"eta", req.eta},
                              {"eta_explicit", req.explicit_step},
                              {"explicit_repeats", req.explicit_repeats},
                              {"explicit_guidance", req.explicit_guidance},
                              {"implicit_guidance", req.implicit_guidance}});
    std::printf("wrote %zu motion file(s) to %s\n", motions.size(), run.outputs().c_str());
    return kOk;
}

// ---------------------------------------------------------------------- eval

struct EvalOpts {
    std::string run, checkpoint, evaluator, data, inference_text = "auto";
    bool overwrite = false;
    EvalConfig cfg;
};

int cmd_eval(EvalOpts o) {
    if (o.inference_text != "auto") o.cfg.interaction_text = parse_text_mode(o.inference_text);
    o.cfg.validate();
    const fs::path ckpt = resolve_checkpoint(o.checkpoint);
    const fs::path ev_ckpt = resolve_checkpoint(o.evaluator);
    const fs::path data = resolve_dataset(o.data, "test.jsonl");
    const RunDir run{o.run};
    run.prepare(o.overwrite);
    const Model model = model_from_checkpoint(load_checkpoint(ckpt));
    const Evaluator ev = Evaluator::from_checkpoint(load_checkpoint(ev_ckpt));
    const auto test = read_dataset(data);
    const MetricReport rep = evaluate_generation(model, ev, test, o.cfg);
    write_json(run.outputs() / "metrics.json", report_to_json(rep));
    write_text(run.log(), "metric,mean,ci95\n");
    {
        std::ofstream log(run.log(), std::ios::app);
        for (const auto& [name, s] : rep) log << name << ',' << s.mean << ',' << s.ci95 << '\n';
    }
    write_json(run.config(), {{"command", "eval"},
                              {"checkpoint", ckpt.string()},
                              {"evaluator", ev_ckpt.string()},
                              {"data", data.string()},
                              {"n_records", o.cfg.n_records},
                              {"pool", o.cfg.pool_size},
                              {"top_k", o.cfg.top_k},
                              {"repetitions", o.cfg.repetitions},
                              {"diversity_pairs", o.cfg.diversity_pairs},
                              {"mmodality_texts", o.cfg.mmodality_texts},
                              {"mmodality_repeats", o.cfg.mmodality_repeats},
                              {"batch_size", o.cfg.batch_size},
                              {"seed", o.cfg.seed},
                              {"inference_text", o.inference_text},
                              {"guidance_scale", o.cfg.guidance_scale},
                              {"steps", o.cfg.inference_steps}});
    std::cout << report_to_json(rep).dump(2) << "\n";
    return kOk;
}

// -------------------------------------------------------------------- oracle

struct OracleOpts {
    std::string run;
    bool overwrite = false;
    double rho = 0.8;
    int dim = 1;
    OracleRecipe recipe;
    OracleTolerances tol;
    int n_samples = 10000;
    bool untrained = false;
    double guidance_scale = 1.0;
    int steps = 250;
};

int cmd_oracle(const OracleOpts& o) {
    if (!(std::abs(o.rho) < 1.0)) throw InvalidArgument("rho must lie in (-1, 1)");
    if (o.dim < 1) throw InvalidArgument("dim must be >= 1");
    OracleRecipe recipe = o.recipe;
    recipe.dims.pose_dim = o.dim;
    if (o.untrained) recipe.stage2_steps = 0;
    recipe.validate();
    const GaussianTask task = GaussianTask::correlated(o.rho, o.dim);
    const RunDir run{o.run};
    run.prepare(o.overwrite);
    LogCsv log(run.log());
    const Model model = train_oracle(task, recipe, std::ref(log));
    save_checkpoint(run.checkpoints() / "final", to_checkpoint(model, "2"));
    const OracleReport rep = verify_factorization(task, model, o.n_samples, o.tol, mix_seed(recipe.seed, 0x0b),
                                                  o.untrained, o.guidance_scale, o.steps);
    json j = rep.to_json();
    j["rho"] = o.rho;
    j["untrained"] = o.untrained;
    write_json(run.outputs() / "report.json", j);
    write_json(run.config(), {{"command", "oracle"},
                              {"rho", o.rho},
                              {"dim", o.dim},
                              {"n_train", recipe.n_train},
                              {"stage1_steps", recipe.stage1_steps},
                              {"stage2_steps", recipe.stage2_steps},
                              {"batch_size", recipe.batch_size},
                              {"lr", recipe.learning_rate},
                              {"lr_cosine_decay", recipe.lr_cosine_decay},
                              {"diffusion_steps", recipe.diffusion_steps},
                              {"dims", dims_json(recipe.dims)},
                              {"seed", recipe.seed},
                              {"n_samples", o.n_samples},
                              {"guidance_scale", o.guidance_scale},
                              {"steps", o.steps},
                              {"untrained", o.untrained},
                              {"tol_mean", o.tol.mean},
                              {"tol_cov", o.tol.cov_frobenius},
                              {"tol_slope", o.tol.slope}});
    std::cout << j.dump(2) << "\n";
    return kOk;
}

void common(CLI::App* sub, std::string& run, bool& overwrite) {
    sub->config_formatter(std::make_shared<JsonConfig>());
    sub->set_config("--config", "", "JSON config file; flags override its values");
    sub->add_option("--run", run, "Run directory")->required();
    sub->add_flag("--overwrite", overwrite, "Replace existing artifacts in the run directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polymotion: number-free text-to-motion diffusion"};
    app.require_subcommand(1);

    GenDataOpts gd;
    auto* s_gen = app.add_subcommand("gen-data", "Write train/test/n3/n4 synthetic datasets");
    common(s_gen, gd.run, gd.overwrite);
    s_gen->add_option("--seed", gd.gen.seed);
    s_gen->add_option("--n-samples", gd.gen.n_samples);
    s_gen->add_option("--frames", gd.gen.frames);
    s_gen->add_option("--persons", gd.gen.n_persons);
    s_gen->add_option("--skeleton", gd.gen.skeleton);
    s_gen->add_option("--train-fraction", gd.gen.train_fraction);
    s_gen->add_option("--pattern-weight", gd.gen.pattern_weights, "pattern=weight");
    s_gen->add_option("--eval-samples", gd.eval_samples, "Records in each of n3/n4");

    TrainOpts tr;
    auto* s_train = app.add_subcommand("train", "Train stage 1, 2 or spatial");
    common(s_train, tr.run, tr.overwrite);
    s_train->add_option("--stage", tr.stage)->required()->check(CLI::IsMember({"1", "2", "spatial"}));
    s_train->add_option("--data", tr.data, "Dataset file or gen-data run")->required();
    s_train->add_option("--init", tr.init, "Checkpoint (or run) to start from; stages 2 and spatial");
    s_train->add_option("--text-overrides", tr.text_overrides, "Dataset-format file with replacement texts");
    s_train->add_option("--seed", tr.cfg.seed);
    auto* o_epochs = s_train->add_option("--epochs", tr.cfg.epochs);
    s_train->add_option("--max-steps", tr.cfg.max_steps, "Stop after this many steps (0: no limit)");
    auto* o_batch = s_train->add_option("--batch-size", tr.cfg.batch_size);
    auto* o_lr = s_train->add_option("--lr", tr.cfg.learning_rate);
    s_train->add_option("--weight-decay", tr.cfg.weight_decay);
    s_train->add_option("--lr-cosine-decay", tr.cfg.lr_cosine_decay, "Anneal the learning rate to 0 (true|false)");
    s_train->add_option("--diffusion-steps", tr.cfg.diffusion_steps);
    s_train->add_option("--schedule", tr.schedule);
    s_train->add_option("--text-mode", tr.text_mode, "interactive|single (stage 2 text)");
    s_train->add_option("--text-dropout", tr.cfg.text_dropout);
    s_train->add_option("--condition-keep", tr.cfg.condition_keep);
    s_train->add_option("--frame-keep", tr.cfg.spatial_frame_keep);
    s_train->add_option("--log-every", tr.cfg.log_every);
    s_train->add_option("--w-foot", tr.cfg.weights.foot);
    s_train->add_option("--w-vel", tr.cfg.weights.velocity);
    s_train->add_option("--w-bone", tr.cfg.weights.bone);
    s_train->add_option("--w-dm", tr.cfg.weights.distance_map);
    s_train->add_option("--dm-threshold", tr.cfg.weights.dm_threshold);
    s_train->add_flag("--reconstruction-only", tr.reconstruction_only);
    s_train->add_option("--hidden", tr.cfg.dims.hidden);
    s_train->add_option("--heads", tr.cfg.dims.heads);
    s_train->add_option("--blocks", tr.cfg.dims.blocks);
    s_train->add_option("--max-frames", tr.cfg.dims.max_frames);
    s_train->add_option("--text-dim", tr.cfg.dims.text_dim);

    EvaluatorOpts eo;
    auto* s_ev = app.add_subcommand("train-evaluator", "Train the contrastive text/motion evaluator");
    common(s_ev, eo.run, eo.overwrite);
    s_ev->add_option("--data", eo.data)->required();
    s_ev->add_option("--seed", eo.cfg.seed);
    s_ev->add_option("--epochs", eo.cfg.epochs);
    s_ev->add_option("--batch-size", eo.cfg.batch_size);
    s_ev->add_option("--lr", eo.cfg.learning_rate);
    s_ev->add_option("--embed-dim", eo.cfg.embed_dim);
    s_ev->add_option("--hidden", eo.cfg.hidden);
    s_ev->add_option("--temperature", eo.cfg.temperature);

    SampleOpts so;
    auto* s_sample = app.add_subcommand("sample", "Generate N persons recursively");
    common(s_sample, so.run, so.overwrite);
    s_sample->add_option("--checkpoint", so.checkpoint)->required();
    s_sample->add_option("--num-persons", so.num_persons);
    s_sample->add_option("--text", so.texts, "Text per person (repeatable)")->required();
    s_sample->add_option("--interaction-text", so.interaction_texts,
                         "Interaction network text, e.g. the joint description (one, or one per person)");
    s_sample->add_option("--frames", so.req.frames);
    s_sample->add_option("--seed", so.req.seed);
    s_sample->add_option("--spatial", so.spatial, "SpatialSignal JSON per person ('none' to skip)");
    s_sample->add_option("--guidance-scale", so.req.guidance_scale);
    s_sample->add_option("--steps", so.req.inference_steps);
    s_sample->add_option("--eta", so.req.eta, "DDIM stochasticity");
    s_sample->add_option("--eta-explicit", so.req.explicit_step, "Explicit guidance step size");
    s_sample->add_option("--explicit-repeats", so.req.explicit_repeats);
    s_sample->add_flag("--no-explicit", so.no_explicit);
    s_sample->add_flag("--no-implicit", so.no_implicit);

    EvalOpts ev;
    auto* s_eval = app.add_subcommand("eval", "Score generations of a checkpoint");
    common(s_eval, ev.run, ev.overwrite);
    s_eval->add_option("--checkpoint", ev.checkpoint)->required();
    s_eval->add_option("--evaluator", ev.evaluator)->required();
    s_eval->add_option("--data", ev.data, "Test dataset file or gen-data run")->required();
    s_eval->add_option("--n-records", ev.cfg.n_records);
    s_eval->add_option("--pool", ev.cfg.pool_size);
    s_eval->add_option("--top-k", ev.cfg.top_k);
    s_eval->add_option("--repetitions", ev.cfg.repetitions);
    s_eval->add_option("--diversity-pairs", ev.cfg.diversity_pairs);
    s_eval->add_option("--mmodality-texts", ev.cfg.mmodality_texts);
    s_eval->add_option("--mmodality-repeats", ev.cfg.mmodality_repeats);
    s_eval->add_option("--batch-size", ev.cfg.batch_size);
    s_eval->add_option("--seed", ev.cfg.seed);
    s_eval->add_option("--inference-text", ev.inference_text,
                       "auto|interactive|single: interaction network text (auto follows the training mode)");
    s_eval->add_option("--guidance-scale", ev.cfg.guidance_scale);
    s_eval->add_option("--steps", ev.cfg.inference_steps);

    OracleOpts oo;
    auto* s_or = app.add_subcommand("oracle", "Check recursive sampling on a correlated Gaussian");
    common(s_or, oo.run, oo.overwrite);
    s_or->add_option("--rho", oo.rho);
    s_or->add_option("--dim", oo.dim, "Coordinates per person");
    s_or->add_option("--n-train", oo.recipe.n_train);
    s_or->add_option("--stage1-steps", oo.recipe.stage1_steps);
    s_or->add_option("--stage2-steps", oo.recipe.stage2_steps);
    s_or->add_option("--batch-size", oo.recipe.batch_size);
    s_or->add_option("--lr", oo.recipe.learning_rate);
    s_or->add_option("--lr-cosine-decay", oo.recipe.lr_cosine_decay);
    s_or->add_option("--diffusion-steps", oo.recipe.diffusion_steps);
    s_or->add_option("--hidden", oo.recipe.dims.hidden);
    s_or->add_option("--blocks", oo.recipe.dims.blocks);
    s_or->add_option("--seed", oo.recipe.seed);
    s_or->add_option("--n-samples", oo.n_samples);
    s_or->add_option("--guidance-scale", oo.guidance_scale);
    s_or->add_option("--steps", oo.steps);
    s_or->add_flag("--untrained", oo.untrained, "Skip stage 2 (negative control)");
    s_or->add_option("--tol-mean", oo.tol.mean);
    s_or->add_option("--tol-cov", oo.tol.cov_frobenius);
    s_or->add_option("--tol-slope", oo.tol.slope);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        if (*s_gen) return cmd_gen_data(gd);
        if (*s_train) {
            // per-stage defaults for whatever neither the config file nor a flag set
            const TrainConfig d = TrainConfig::defaults(parse_stage(tr.stage));
            if (o_epochs->count() == 0) tr.cfg.epochs = d.epochs;
            if (o_batch->count() == 0) tr.cfg.batch_size = d.batch_size;
            if (o_lr->count() == 0) tr.cfg.learning_rate = d.learning_rate;
            return cmd_train(tr);
        }
        if (*s_ev) return cmd_train_evaluator(eo);
        if (*s_sample) return cmd_sample(so);
        if (*s_eval) return cmd_eval(ev);
        if (*s_or) return cmd_oracle(oo);
    } catch (const InvalidArgument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const InvalidDataset& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const DegenerateRotation& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumerical;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    }
    return kValidation;
}
