// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include "polymotion/evaluation.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace polymotion;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// ------------------------------------------------------------ desk recipe

struct DeskRecipe {
    long stage1_steps = 4000;
    double stage1_lr = 1e-3;
    long stage2_steps = 1500;
    double stage2_lr = 1e-3;
    long spatial_steps = 1500;
    double spatial_lr = 1e-3;
    int explicit_repeats = 8;  // explicit guidance applications per sampler step, 0.1 world units each
    int evaluator_epochs = 200;
    std::vector<std::uint64_t> ablation_seeds{0, 1, 2};
};

/// Runs the CLI pipeline once and caches the run directories.
class Desk {
public:
    Desk(fs::path cli, fs::path work, DeskRecipe recipe)
        : cli_(std::move(cli)), work_(std::move(work)), recipe_(std::move(recipe)) {}

    const DeskRecipe& recipe() const { return recipe_; }

    fs::path data() {
        if (!data_) {
            cli("gen-data --run " + q(work_ / "data") + " --seed 0");
            data_ = work_ / "data";
        }
        return *data_;
    }

    fs::path stage1() {
        if (!stage1_) {
            stage1_ = work_ / "stage1";
            cli("train --stage 1 --run " + q(*stage1_) + " --data " + q(data()) + " --seed 0 --max-steps " +
                std::to_string(recipe_.stage1_steps) + " --lr " + fmt("%g", recipe_.stage1_lr) + " --log-every 100");
        }
        return *stage1_;
    }

    fs::path stage2(const std::string& text_mode, std::uint64_t seed) {
        const std::string key = text_mode + "_" + std::to_string(seed);
        auto it = stage2_.find(key);
        if (it != stage2_.end()) return it->second;
        const fs::path run = work_ / ("stage2_" + key);
        cli("train --stage 2 --run " + q(run) + " --data " + q(data()) + " --init " + q(stage1()) + " --seed " +
            std::to_string(seed) + " --text-mode " + text_mode + " --max-steps " +
            std::to_string(recipe_.stage2_steps) + " --lr " + fmt("%g", recipe_.stage2_lr) + " --log-every 100");
        return stage2_[key] = run;
    }

    fs::path spatial() {
        if (!spatial_) {
            spatial_ = work_ / "spatial";
            cli("train --stage spatial --run " + q(*spatial_) + " --data " + q(data()) + " --init " +
                q(stage2("interactive", 0)) + " --seed 0 --max-steps " + std::to_string(recipe_.spatial_steps) +
                " --lr " + fmt("%g", recipe_.spatial_lr) + " --log-every 100");
        }
        return *spatial_;
    }

    fs::path evaluator() {
        if (!evaluator_) {
            evaluator_ = work_ / "evaluator";
            cli("train-evaluator --run " + q(*evaluator_) + " --data " + q(data()) + " --seed 0 --epochs " +
                std::to_string(recipe_.evaluator_epochs));
        }
        return *evaluator_;
    }

    static Model load_model(const fs::path& run) {
        return model_from_checkpoint(load_checkpoint(run / "checkpoints" / "final"));
    }
    Evaluator load_evaluator() { return Evaluator::from_checkpoint(load_checkpoint(evaluator() / "checkpoints" / "final")); }
    std::vector<SampleRecord> test_records() { return read_dataset(data() / "outputs" / "test.jsonl"); }

    static double train_seconds(const fs::path& run) {
        std::ifstream in(run / "config.resolved.json");
        return nlohmann::json::parse(in).at("seconds").get<double>();
    }

    int cli_status(const std::string& args) const {
        const std::string cmd = q(cli_) + " " + args + " >> " + q(work_ / "cli.log") + " 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    void cli(const std::string& args) const {
        std::cerr << "  $ polymotion " << args << "\n";
        const int rc = cli_status(args);
        if (rc != 0) throw std::runtime_error("command failed (exit " + std::to_string(rc) + "): " + args);
    }

    static std::string q(const fs::path& p) { return "'" + p.string() + "'"; }
    const fs::path& work() const { return work_; }

private:
    fs::path cli_, work_;
    DeskRecipe recipe_;
    std::optional<fs::path> data_, stage1_, spatial_, evaluator_;
    std::map<std::string, fs::path> stage2_;
};

// ------------------------------------------------------------- criteria

Outcome zero_init_noop() {
    const NetDims dims;
    const ParamSet<float> gen = init_generation<float>(dims, 11);
    Model m;
    m.dims = dims;
    m.skeleton = SkeletonDef::default7();
    m.stats = FeatureStats::identity(dims.pose_dim);
    m.gen = gen;
    m.inter = init_interaction<float>(gen, dims, 12);
    Rng rng(13);
    int exact = 0;
    for (int i = 0; i < 100; ++i) {
        const int F = std::uniform_int_distribution<int>(1, dims.max_frames)(rng);
        const int t = std::uniform_int_distribution<int>(1, 1000)(rng);
        const int n_cond = std::uniform_int_distribution<int>(0, 3)(rng);
        const MatT<float> x = random_matrix(F, dims.pose_dim, rng).cast<float>();
        const MatT<float> text = random_matrix(1, dims.text_dim, rng).cast<float>();
        std::vector<MatT<float>> conds;
        for (int c = 0; c < n_cond; ++c) conds.push_back(random_matrix(F, dims.pose_dim, rng).cast<float>());
        MatT<float> spatial_feats;
        std::vector<const MatT<float>*> spatial{nullptr};
        if (i % 2 == 1) {
            SpatialSignal s;
            s.targets = random_matrix(F, 3 * dims.joints, rng);
            s.observed = (random_matrix(F, dims.joints, rng).array() > 0).cast<double>().matrix();
            spatial_feats = spatial_features(s).cast<float>();
            spatial[0] = &spatial_feats;
        }
        const auto segs = ad::Segments::uniform(1, F);
        const double w = i % 3 == 0 ? 1.0 : 2.0;
        const MatT<float> full = guided_prediction(m, x, segs, t, text, {conds}, spatial, w, true);
        const MatT<float> gm_only = guided_prediction(m, x, segs, t, text, {conds}, {nullptr}, w, false);
        if (full.size() == gm_only.size() &&
            std::memcmp(full.data(), gm_only.data(), sizeof(float) * static_cast<std::size_t>(full.size())) == 0)
            ++exact;
    }
    return {exact == 100, std::to_string(exact) + "/100 bit-exact"};
}

Outcome gradient_check() {
    const NetDims dims{pose_dim(2), 2, 8, 2, 1, 4, 8};
    const int F = 4;
    const SkeletonDef skel = SkeletonDef::chain(2, 0.5);
    Rng rng(21);
    ParamSet<double> gen = init_generation<double>(dims, 22);
    ParamSet<double> inter = init_interaction<double>(gen, dims, 23);
    // move away from the zero-initialised projections so every path carries gradient
    for (auto* ps : {&gen, &inter})
        for (auto& [name, m] : ps->arrays()) m += random_matrix(m.rows(), m.cols(), rng, 0.05);
    FeatureStats stats = FeatureStats::identity(dims.pose_dim);
    stats.std = (random_matrix(1, dims.pose_dim, rng, 0.2).array().abs() + 0.5).matrix();
    const NoiseSchedule sched = make_schedule(1000);
    std::vector<StepSample<double>> batch(3);
    for (int b = 0; b < 3; ++b) {
        auto& s = batch[static_cast<std::size_t>(b)];
        s.x0 = random_matrix(F, dims.pose_dim, rng, 0.5);
        s.x0.rightCols(4) = (random_matrix(F, 4, rng).array() > 0).cast<double>().matrix();
        s.noise = random_matrix(F, dims.pose_dim, rng);
        s.t = 100 + 300 * b;
        s.text = random_matrix(1, dims.text_dim, rng);
        if (b == 1) s.inter_text = random_matrix(1, dims.text_dim, rng);
        for (int c = 0; c < b; ++c) s.conditions.push_back(random_matrix(F, dims.pose_dim, rng, 0.5));
        if (b == 2) s.spatial = random_matrix(F, dims.spatial_dim(), rng, 0.5);
    }
    LossWeights w;
    w.dm_threshold = 5.0;  // keeps pairs inside the distance-map mask at this scale

    ParamSet<double> g_gen = gen.zeros_like(), g_inter = inter.zeros_like();
    step_loss<double>(gen, &inter, dims, &skel, stats, w, sched, batch, &g_gen, &g_inter);
    ParamSet<double> g_gen_only = gen.zeros_like();
    step_loss<double>(gen, nullptr, dims, &skel, stats, w, sched, batch, &g_gen_only, nullptr);

    double worst = 0.0;
    long checked = 0;
    const double h = 1e-6;
    auto sweep = [&](ParamSet<double>& params, const ParamSet<double>& grads, const ParamSet<double>* inter_p) {
        for (auto& [name, m] : params.arrays())
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                const double orig = m.data()[i];
                m.data()[i] = orig + h;
                const double up = step_loss<double>(gen, inter_p, dims, &skel, stats, w, sched, batch, nullptr, nullptr).total;
                m.data()[i] = orig - h;
                const double down =
                    step_loss<double>(gen, inter_p, dims, &skel, stats, w, sched, batch, nullptr, nullptr).total;
                m.data()[i] = orig;
                const double num = (up - down) / (2 * h), ana = grads.at(name).data()[i];
                worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
                ++checked;
            }
    };
    sweep(inter, g_inter, &inter);   // interaction network, full loss with distance map
    sweep(gen, g_gen_only, nullptr);  // generation network, stage-1 loss
    return {worst < 1e-3, std::to_string(checked) + " entries, max rel err " + fmt("%.2e", worst)};
}

Outcome diffusion_algebra() {
    const NoiseSchedule ten = make_schedule(10, ScheduleKind::linear);
    Rng rng(31);
    const Mat x0 = random_matrix(8, 6, rng);
    Mat x = x0, eps_acc = Mat::Zero(8, 6);
    double ab = 1.0, kernel_err = 0.0;
    for (int t = 1; t <= 10; ++t) {
        const Mat z = random_matrix(8, 6, rng);
        const double beta = ten.beta(t);
        x = std::sqrt(1.0 - beta) * x + std::sqrt(beta) * z;
        eps_acc = std::sqrt(1.0 - beta) * eps_acc + std::sqrt(beta) * z;
        ab *= 1.0 - beta;
        const Mat eps = eps_acc / std::sqrt(1.0 - ab);
        kernel_err = std::max(kernel_err, (q_sample<double>(x0, t, eps, ten) - x).cwiseAbs().maxCoeff());
    }

    double ddim_err = 0.0;
    for (const auto& [T, steps] : std::vector<std::pair<int, int>>{{10, 10}, {1000, 50}}) {
        const NoiseSchedule s = make_schedule(T);
        SamplerConfig cfg;
        cfg.num_inference_steps = steps;
        const DenoiseFn<double> perfect = [&](const Mat&, int) { return x0; };
        ddim_err = std::max(ddim_err, (sample_loop<double>(perfect, 8, 6, cfg, s, 32) - x0).cwiseAbs().maxCoeff());
    }

    const NoiseSchedule s = make_schedule(1000);
    SamplerConfig cfg;
    const DenoiseFn<double> shrink = [](const Mat& xt, int t) { return (0.5 * xt).eval() * (1.0 + 1e-3 * t); };
    const Mat a = sample_loop<double>(shrink, 8, 6, cfg, s, 33), b = sample_loop<double>(shrink, 8, 6, cfg, s, 33);
    const bool reproducible = std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;

    const NetDims dims{88, 7, 16, 2, 1, 16, 16};
    Model m;
    m.dims = dims;
    m.skeleton = SkeletonDef::default7();
    m.stats = FeatureStats::identity(88);
    m.gen = init_generation<float>(dims, 34);
    m.inter = init_interaction<float>(m.gen, dims, 35);
    GenerationRequest r;
    r.texts = {"a person waves", "someone waves back"};
    r.frames = 8;
    r.seed = 36;
    r.inference_steps = 10;
    const auto m1 = sample_features(m, {r}), m2 = sample_features(m, {r});
    const bool model_reproducible = m1 == m2;

    const bool pass = kernel_err < 1e-5 && ddim_err < 1e-5 && reproducible && model_reproducible;
    return {pass, "kernel err " + fmt("%.1e", kernel_err) + ", DDIM err " + fmt("%.1e", ddim_err) +
                      ", reproducible " + (reproducible && model_reproducible ? "yes" : "no")};
}

Outcome factorization_oracle() {
    const GaussianTask task = GaussianTask::correlated(0.8, 1);
    OracleRecipe recipe;
    recipe.seed = 0;
    const auto t0 = Clock::now();
    const Model model = train_oracle(task, recipe);
    const double train_s = since(t0);
    const OracleReport rep = verify_factorization(task, model, 10000, OracleTolerances{}, 41);

    OracleRecipe untrained = recipe;
    untrained.stage2_steps = 0;
    const Model base = train_oracle(task, untrained);
    const OracleReport neg = verify_factorization(task, base, 10000, OracleTolerances{}, 41, true);

    const bool pass = rep.pass && train_s <= 600.0 && neg.slope_err > 0.3;
    return {pass, "slope " + fmt("%.3f", rep.regression_emp(0, 0)) + ", mean err " + fmt("%.3f", rep.mean_err) +
                      ", cov err " + fmt("%.3f", rep.cov_err) + ", training " + fmt("%.0f s", train_s) +
                      "; untrained slope err " + fmt("%.3f", neg.slope_err)};
}

Outcome condition_generality(Desk& desk) {
    const fs::path model_run = desk.stage2("interactive", 0);
    int valid = 0;
    std::string shapes;
    for (int n = 1; n <= 4; ++n) {
        const fs::path run = desk.work() / ("sample_n" + std::to_string(n));
        desk.cli("sample --run " + Desk::q(run) + " --overwrite --checkpoint " + Desk::q(model_run) +
                 " --num-persons " + std::to_string(n) + " --text 'two people greet each other' --frames 32 --seed " +
                 std::to_string(n));
        bool ok = true;
        for (int p = 1; p <= n; ++p) {
            const fs::path f = run / "outputs" / ("person_" + std::to_string(p) + ".json");
            if (!fs::exists(f)) {
                ok = false;
                continue;
            }
            std::ifstream in(f);
            const auto j = nlohmann::json::parse(in);
            const auto rows = j.at("features").get<std::vector<std::vector<double>>>();
            Mat data(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (std::size_t c = 0; c < rows[r].size(); ++c) data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
            MotionSeq m{data, SkeletonDef::default7()};
            ok = ok && data.rows() == 32 && data.cols() == 88 && is_valid(m, Validation::structural);
        }
        if (fs::exists(run / "outputs" / ("person_" + std::to_string(n + 1) + ".json"))) ok = false;
        valid += ok ? 1 : 0;
    }

    const Model model = Desk::load_model(model_run);
    Rng rng(51);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int F = 32, n_cond = 2 + trial % 3;
        const MatT<float> x = random_matrix(F, 88, rng).cast<float>();
        const MatT<float> text = random_matrix(1, model.dims.text_dim, rng).cast<float>();
        std::vector<MatT<float>> conds;
        for (int c = 0; c < n_cond; ++c) conds.push_back(random_matrix(F, 88, rng).cast<float>());
        std::vector<MatT<float>> perm(conds.rbegin(), conds.rend());
        std::rotate(perm.begin(), perm.begin() + 1, perm.end());
        const int t = std::uniform_int_distribution<int>(1, 1000)(rng);
        const auto a = im_residuals<float>(model.gen, *model.inter, model.dims, x, conds, nullptr, t, text);
        const auto b = im_residuals<float>(model.gen, *model.inter, model.dims, x, perm, nullptr, t, text);
        for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, double((a[k] - b[k]).cwiseAbs().maxCoeff()));
    }
    return {valid == 4 && worst < 1e-6,
            std::to_string(valid) + "/4 person counts valid, permutation max diff " + fmt("%.1e", worst)};
}

Outcome spatial_control(Desk& desk) {
    const Model model = Desk::load_model(desk.spatial());
    const auto test = desk.test_records();
    Rng rng(61);
    double err_guided = 0.0, err_free = 0.0;
    int observed_total = 0, valid = 0, differ = 0;
    const int prompts = 20;
    for (int i = 0; i < prompts; ++i) {
        const SampleRecord& rec = test[static_cast<std::size_t>(i)];
        const MotionSeq& gt = rec.motions.front();
        const int F = gt.frames(), J = gt.joints();
        SpatialSignal s;
        s.targets = get_positions(gt);
        s.observed = Mat::Zero(F, J);
        std::bernoulli_distribution keep(0.25);
        for (int f = 0; f < F; ++f) s.observed(f, 0) = keep(rng) ? 1.0 : 0.0;
        if (!s.any_observed()) s.observed(F / 2, 0) = 1.0;
        const int n_obs = static_cast<int>(s.observed.sum());

        GenerationRequest r;
        r.texts = {rec.texts_single.front()};
        r.frames = F;
        r.seed = mix_seed(62, static_cast<std::uint64_t>(i));
        r.spatial = {s};
        r.explicit_repeats = desk.recipe().explicit_repeats;
        const MotionSeq guided = sample_single(model, r);
        r.spatial.clear();
        const MotionSeq free_run = sample_single(model, r);

        err_guided += spatial_distance(get_positions(guided), s);
        err_free += spatial_distance(get_positions(free_run), s);
        observed_total += n_obs;
        if (guided.data.allFinite() && is_valid(guided, Validation::structural)) ++valid;
        // channels other than the constrained root position
        Mat a = guided.data, b = free_run.data;
        a.leftCols(3).setZero();
        b.leftCols(3).setZero();
        if ((a - b).cwiseAbs().maxCoeff() > 0) ++differ;
    }
    err_guided /= observed_total;
    err_free /= observed_total;
    const double reduction = 1.0 - err_guided / err_free;
    return {reduction >= 0.6 && valid == prompts && differ == prompts,
            "root error " + fmt("%.3f", err_free) + " -> " + fmt("%.3f", err_guided) + " (" +
                fmt("%.1f%%", 100 * reduction) + " reduction), " + std::to_string(valid) + "/20 valid, " +
                std::to_string(differ) + "/20 differ, explicit repeats " +
                std::to_string(desk.recipe().explicit_repeats)};
}

MetricReport evaluate(Desk& desk, const Model& model, std::uint64_t seed) {
    EvalConfig cfg;
    cfg.seed = seed;
    return evaluate_generation(model, desk.load_evaluator(), desk.test_records(), cfg);
}

Outcome end_to_end(Desk& desk) {
    const fs::path s2 = desk.stage2("interactive", 0);
    const double train_s = Desk::train_seconds(desk.stage1()) + Desk::train_seconds(s2);
    const Model model = Desk::load_model(s2);
    const MetricReport trained = evaluate(desk, model, 71);

    Model random = model;
    random.gen = init_generation<float>(model.dims, 72);
    random.inter = init_interaction<float>(random.gen, model.dims, 73);
    random.interaction_steps = 0;
    const MetricReport rnd = evaluate(desk, random, 71);

    const double top1 = trained.at("r_precision_top1").mean;
    const double ratio = rnd.at("fid").mean / std::max(trained.at("fid").mean, 1e-12);
    const bool pass = train_s < 90 * 60 && top1 > 3 * 0.125 && ratio >= 5.0;
    return {pass, "stages 1+2 " + fmt("%.1f min", train_s / 60) + ", R-precision top-1 " + fmt("%.3f", top1) +
                      " (gt " + fmt("%.3f", trained.at("gt_r_precision_top1").mean) + "), FID " +
                      fmt("%.3f", trained.at("fid").mean) + " vs random " + fmt("%.3f", rnd.at("fid").mean) +
                      " (ratio " + fmt("%.1f", ratio) + ")"};
}

Outcome ablation(Desk& desk) {
    double sum_inter = 0.0, sum_single = 0.0;
    std::string per_seed;
    for (std::uint64_t seed : desk.recipe().ablation_seeds) {
        const double a = evaluate(desk, Desk::load_model(desk.stage2("interactive", seed)), 81).at("r_precision_top1").mean;
        const double b = evaluate(desk, Desk::load_model(desk.stage2("single", seed)), 81).at("r_precision_top1").mean;
        sum_inter += a;
        sum_single += b;
        per_seed += (per_seed.empty() ? "" : ", ") + fmt("%.3f", a) + "/" + fmt("%.3f", b);
    }
    const double n = static_cast<double>(desk.recipe().ablation_seeds.size());
    return {sum_inter / n >= sum_single / n, "mean top-1 interactive " + fmt("%.3f", sum_inter / n) + " vs single " +
                                                 fmt("%.3f", sum_single / n) + " (per seed " + per_seed + ")"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string cli_path, work = "acceptance_work";
    std::vector<int> only;
    app.add_option("--cli", cli_path, "Path to the polymotion executable")->required();
    app.add_option("--work", work, "Working directory for pipeline runs");
    app.add_option("--only", only, "Run only these criteria (1-8)");
    CLI11_PARSE(app, argc, argv);

    // pipeline runs are never reused between invocations
    fs::remove_all(work);
    fs::create_directories(work);
    Desk desk(fs::absolute(cli_path), fs::absolute(work), DeskRecipe{});

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"zero-init no-op", zero_init_noop},
        {"gradient correctness", gradient_check},
        {"diffusion algebra", diffusion_algebra},
        {"factorization oracle", factorization_oracle},
        {"condition generality and symmetry", [&] { return condition_generality(desk); }},
        {"spatial control efficacy", [&] { return spatial_control(desk); }},
        {"end-to-end desk-scale training", [&] { return end_to_end(desk); }},
        {"ablation direction", [&] { return ablation(desk); }},
    };
    const std::set<int> selected(only.begin(), only.end());
    std::vector<std::string> lines;
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const std::string line = std::string(o.pass ? "PASS" : "FAIL") + "  " + std::to_string(id) + ". " +
                                 criteria[i].first + ": " + o.detail + " [" + fmt("%.0f s", since(t0)) + "]";
        std::cout << line << std::endl;
        lines.push_back(line);
        all = all && o.pass;
    }
    std::cout << "\n";
    for (const auto& l : lines) std::cout << l << "\n";
    return all ? 0 : 1;
}
