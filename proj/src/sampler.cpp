#include "polymotion/sampler.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace polymotion {

using ad::RowRef;
using ad::Segments;
using ad::Var;

const SpatialSignal* GenerationRequest::spatial_for(int person) const {
    if (person < 0 || person >= static_cast<int>(spatial.size())) return nullptr;
    return spatial[static_cast<std::size_t>(person)] ? &*spatial[static_cast<std::size_t>(person)] : nullptr;
}

void GenerationRequest::validate(const Model& model) const {
    if (texts.empty()) throw InvalidArgument("request: need at least one person");
    if (frames < 1 || frames > model.dims.max_frames)
        throw InvalidArgument("request: frames must lie in [1, " + std::to_string(model.dims.max_frames) + "]");
    if (!(guidance_scale >= 0)) throw InvalidArgument("request: guidance_scale must be >= 0");
    if (!(explicit_step >= 0)) throw InvalidArgument("request: explicit guidance step must be >= 0");
    if (explicit_repeats < 0) throw InvalidArgument("request: explicit_repeats must be >= 0");
    if (!interaction_texts.empty() && interaction_texts.size() != texts.size())
        throw InvalidArgument("request: interaction texts must be empty or one per person");
    if (spatial.size() > texts.size()) throw InvalidArgument("request: more spatial signals than persons");
    polymotion::validate(SamplerConfig{inference_steps, guidance_scale, eta}, model.make_noise_schedule());
    for (int p = 0; p < persons(); ++p) {
        const SpatialSignal* s = spatial_for(p);
        if (!s) continue;
        if (!model.skeleton || model.dims.joints == 0)
            throw InvalidArgument("request: spatial signals need a motion model with a skeleton");
        s->validate(frames, model.dims.joints);
    }
}

template <typename T>
void explicit_guidance(MatT<T>& x, const SpatialSignal& s, double step, int repeats, const FeatureStats* stats) {
    const int F = s.frames(), J = s.joints();
    if (x.rows() != F || x.cols() < 3 * J) throw InvalidArgument("explicit_guidance: shape mismatch");
    for (int f = 0; f < F; ++f) {
        for (int j = 0; j < J; ++j) {
            if (!(s.observed(f, j) > 0.5)) continue;
            Vec3 p, scale = Vec3::Ones(), offset = Vec3::Zero();
            for (int a = 0; a < 3; ++a) {
                const int c = 3 * j + a;
                if (stats) {
                    scale(a) = stats->std(0, c);
                    offset(a) = stats->mean(0, c);
                }
                p(a) = static_cast<double>(x(f, c)) * scale(a) + offset(a);
            }
            const Vec3 target(s.targets(f, 3 * j), s.targets(f, 3 * j + 1), s.targets(f, 3 * j + 2));
            bool moved = false;
            for (int r = 0; r < repeats; ++r) {
                const Vec3 d = p - target;
                const double n = d.norm();
                if (n < 1e-8) break;
                p -= step * d / n;
                moved = true;
            }
            if (!moved) continue;
            for (int a = 0; a < 3; ++a) x(f, 3 * j + a) = static_cast<T>((p(a) - offset(a)) / scale(a));
        }
    }
}

double spatial_distance(const Mat& positions, const SpatialSignal& s) {
    double total = 0;
    for (int f = 0; f < s.frames(); ++f)
        for (int j = 0; j < s.joints(); ++j)
            if (s.observed(f, j) > 0.5)
                total += (positions.block(f, 3 * j, 1, 3) - s.targets.block(f, 3 * j, 1, 3)).norm();
    return total;
}

MatT<float> guided_prediction(const Model& model, const MatT<float>& x_t, const Segments& segs, int t,
                              const MatT<float>& text, const std::vector<std::vector<MatT<float>>>& conditions,
                              const std::vector<const MatT<float>*>& spatial, double w, bool use_interaction,
                              const MatT<float>* inter_text) {
    const NetDims& d = model.dims;
    const int B = segs.count();
    const int rows = segs.total_rows();
    const bool need_uncond = w != 1.0;
    const bool need_cond = w != 0.0;
    const int branches = (need_uncond && need_cond) ? 2 : 1;

    ad::Tape<float> tape;
    Binder<float> gb(tape, model.gen);
    // Row layout: [conditional batch | unconditional batch] when both are needed.
    MatT<float> x(rows * branches, d.pose_dim), txt(B * branches, d.text_dim);
    Segments all;
    std::vector<int> ts;
    for (int br = 0; br < branches; ++br) {
        x.middleRows(br * rows, rows) = x_t;
        const bool conditional = need_cond && br == 0;
        if (conditional)
            txt.middleRows(br * B, B) = text;
        else
            txt.middleRows(br * B, B).setZero();
        for (int b = 0; b < B; ++b) {
            all.push(segs.length[b]);
            ts.push_back(t);
        }
    }
    const Var xv = tape.constant(std::move(x));
    const Var cond = gm_condition(gb, d, ts, txt);

    std::vector<Var> residuals;
    if (use_interaction && model.inter) {
        Binder<float> ib(tape, *model.inter);
        InterBatch batch;
        // The interaction network always sees the text condition, even for the unconditional branch.
        const Var target_rows = branches == 1 ? xv : tape.constant(x_t);
        batch.target = target_rows;
        batch.segs = segs;
        int cond_rows = 0;
        for (int b = 0; b < B; ++b) cond_rows += static_cast<int>(conditions[b].size()) * segs.length[b];
        if (cond_rows > 0) {
            MatT<float> stacked(cond_rows, d.pose_dim);
            int at = 0;
            for (int b = 0; b < B; ++b) {
                for (const auto& c : conditions[b]) {
                    stacked.middleRows(at, c.rows()) = c;
                    at += static_cast<int>(c.rows());
                    batch.owner.push_back(b);
                }
            }
            batch.conditions = tape.constant(std::move(stacked));
        }
        bool any_spatial = false;
        for (const auto* s : spatial) any_spatial = any_spatial || s != nullptr;
        if (any_spatial) {
            MatT<float> sp = MatT<float>::Zero(rows, d.spatial_dim());
            for (int b = 0; b < B; ++b)
                if (spatial[b]) sp.middleRows(segs.start[b], segs.length[b]) = *spatial[b];
            batch.spatial = tape.constant(std::move(sp));
        }
        Var im_cond = cond;
        if (inter_text) {
            im_cond = gm_condition(gb, d, std::vector<int>(static_cast<std::size_t>(B), t), *inter_text);
        } else if (branches == 2 || !need_cond) {
            // condition rows carry the text; build them when the batch has only the null-text branch
            if (need_cond) {
                std::vector<RowRef> first;
                for (int b = 0; b < B; ++b) first.push_back({0, b});
                im_cond = tape.gather_rows({cond}, first);
            } else {
                im_cond = gm_condition(gb, d, std::vector<int>(static_cast<std::size_t>(B), t), text);
            }
        }
        const InterOutput io = im_forward(ib, d, batch, im_cond);
        for (Var r : io.residuals) {
            if (branches == 1) {
                residuals.push_back(r);
            } else {
                std::vector<RowRef> dup;
                for (int br = 0; br < branches; ++br)
                    for (int i = 0; i < rows; ++i) dup.push_back({0, i});
                residuals.push_back(tape.gather_rows({r}, dup));
            }
        }
    }
    const GenOutput out = gm_forward(gb, d, xv, cond, all, residuals);
    const MatT<float>& pred = tape.value(out.x0_hat);
    if (branches == 1) return pred;
    return cfg_combine<float>(pred.bottomRows(rows), pred.topRows(rows), w);
}

std::vector<std::vector<Mat>> sample_features(const Model& model, const std::vector<GenerationRequest>& requests) {
    if (requests.empty()) return {};
    const int N = requests.front().persons();
    const int F = requests.front().frames;
    for (const auto& r : requests) {
        r.validate(model);
        if (r.persons() != N || r.frames != F) throw InvalidArgument("sample_features: requests must share N and F");
        if (r.inference_steps != requests.front().inference_steps || r.eta != requests.front().eta ||
            r.guidance_scale != requests.front().guidance_scale)
            throw InvalidArgument("sample_features: requests must share sampler settings");
    }
    const GenerationRequest& head = requests.front();
    const int B = static_cast<int>(requests.size());
    const int D = model.dims.pose_dim;
    const NoiseSchedule schedule = model.make_noise_schedule();
    const TextEmbedder te = model.make_embedder();
    const std::vector<int> ts = inference_timesteps(schedule.steps(), head.inference_steps);
    const Segments segs = Segments::uniform(B, F);

    std::vector<std::vector<MatT<float>>> generated(static_cast<std::size_t>(B));  // normalised, per request
    for (int person = 0; person < N; ++person) {
        try {
            std::vector<Rng> rngs;
            MatT<float> x(B * F, D), text(B, model.dims.text_dim), itext(B, model.dims.text_dim);
            bool any_itext = false;
            std::vector<MatT<float>> feats(static_cast<std::size_t>(B));
            std::vector<const MatT<float>*> spatial(static_cast<std::size_t>(B), nullptr);
            bool any_spatial = false;
            for (int b = 0; b < B; ++b) {
                const auto& r = requests[b];
                rngs.emplace_back(mix_seed(r.seed, static_cast<std::uint64_t>(person)));
                x.middleRows(b * F, F) = gaussian_noise<float>(F, D, rngs.back());
                text.row(b) = te.embed(r.texts[person]).cast<float>();
                itext.row(b) = text.row(b);
                if (!r.interaction_texts.empty()) {
                    itext.row(b) = te.embed(r.interaction_texts[person]).cast<float>();
                    any_itext = true;
                }
                if (const SpatialSignal* s = r.spatial_for(person)) {
                    any_spatial = true;
                    if (r.implicit_guidance) {
                        feats[b] = spatial_features(*s).cast<float>();
                        spatial[b] = &feats[b];
                    }
                }
            }
            const bool use_im = model.inter && (person > 0 || head.interaction_for_first || any_spatial);
            for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
                const int t = ts[i], t_prev = ts[i + 1];
                const MatT<float> x0_hat = guided_prediction(model, x, segs, t, text, generated, spatial,
                                                             head.guidance_scale, use_im, any_itext ? &itext : nullptr);
                if (head.eta > 0.0) {
                    MatT<float> z(B * F, D);
                    for (int b = 0; b < B; ++b) z.middleRows(b * F, F) = gaussian_noise<float>(F, D, rngs[b]);
                    x = ddim_step<float>(x, x0_hat, t, t_prev, schedule, head.eta, &z);
                } else {
                    x = ddim_step<float>(x, x0_hat, t, t_prev, schedule);
                }
                for (int b = 0; b < B; ++b) {
                    const auto& r = requests[b];
                    const SpatialSignal* s = r.spatial_for(person);
                    if (!s || !r.explicit_guidance || r.explicit_repeats == 0) continue;
                    MatT<float> xb = x.middleRows(b * F, F);
                    explicit_guidance(xb, *s, r.explicit_step, r.explicit_repeats, &model.stats);
                    x.middleRows(b * F, F) = xb;
                }
            }
            if (!x.allFinite()) throw NumericalError("non-finite sample");
            for (int b = 0; b < B; ++b) generated[b].push_back(x.middleRows(b * F, F));
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("person " + std::to_string(person + 1) + ": " + e.what());
        } catch (const NumericalError& e) {
            throw NumericalError("person " + std::to_string(person + 1) + ": " + e.what());
        }
    }
    std::vector<std::vector<Mat>> out(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
        for (const auto& g : generated[b]) out[b].push_back(model.stats.denormalize<float>(g).cast<double>());
    return out;
}

namespace {

MotionSeq to_motion_seq(const Model& model, Mat data) {
    const SkeletonDef& sk = *model.skeleton;
    const int c0 = channels::contacts(sk.joint_count);
    data.middleCols(c0, 4) = data.middleCols(c0, 4).cwiseMax(0.0).cwiseMin(1.0);
    MotionSeq m{std::move(data), sk};
    validate(m, Validation::structural);
    return m;
}

}  // namespace

std::vector<MotionSeq> sample_multi(const Model& model, const GenerationRequest& request) {
    if (!model.skeleton) throw InvalidArgument("sample_multi: model has no skeleton");
    auto feats = sample_features(model, {request});
    std::vector<MotionSeq> out;
    for (auto& f : feats.front()) out.push_back(to_motion_seq(model, std::move(f)));
    return out;
}

MotionSeq sample_single(const Model& model, const GenerationRequest& request) {
    if (request.persons() != 1) throw InvalidArgument("sample_single: request must hold exactly one text");
    return sample_multi(model, request).front();
}

void write_trajectory_csv(const std::filesystem::path& path, const std::vector<MotionSeq>& motions) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << "frame,person,joint,x,y,z\n";
    char buf[128];
    for (std::size_t p = 0; p < motions.size(); ++p) {
        const Mat pos = get_positions(motions[p]);
        for (int f = 0; f < motions[p].frames(); ++f) {
            for (int j = 0; j < motions[p].joints(); ++j) {
                std::snprintf(buf, sizeof buf, "%d,%zu,%d,%.9g,%.9g,%.9g\n", f, p + 1, j, pos(f, 3 * j),
                              pos(f, 3 * j + 1), pos(f, 3 * j + 2));
                out << buf;
            }
        }
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

SpatialSignal read_spatial_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open spatial signal '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
        const int F = j.at("frames").get<int>();
        const int J = j.at("joints").get<int>();
        SpatialSignal s;
        s.targets = Mat::Zero(F, 3 * J);
        s.observed = Mat::Zero(F, J);
        const auto& tg = j.at("targets");
        const auto& ob = j.at("observed");
        if (static_cast<int>(tg.size()) != F || static_cast<int>(ob.size()) != F)
            throw InvalidArgument("spatial signal: frame count mismatch");
        for (int f = 0; f < F; ++f) {
            if (static_cast<int>(tg[f].size()) != J || static_cast<int>(ob[f].size()) != J)
                throw InvalidArgument("spatial signal: joint count mismatch");
            for (int k = 0; k < J; ++k) {
                const double o = ob[f][k].get<double>();
                if (o != 0.0 && o != 1.0) throw InvalidArgument("spatial signal: observed entries must be 0 or 1");
                s.observed(f, k) = o;
                if (tg[f][k].is_null()) continue;
                for (int a = 0; a < 3; ++a) s.targets(f, 3 * k + a) = tg[f][k].at(a).get<double>();
            }
        }
        s.validate(F, J);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed spatial signal: ") + e.what());
    }
}

void write_spatial_json(const std::filesystem::path& path, const SpatialSignal& s) {
    nlohmann::json targets = nlohmann::json::array(), observed = nlohmann::json::array();
    for (int f = 0; f < s.frames(); ++f) {
        nlohmann::json trow = nlohmann::json::array(), orow = nlohmann::json::array();
        for (int k = 0; k < s.joints(); ++k) {
            trow.push_back({s.targets(f, 3 * k), s.targets(f, 3 * k + 1), s.targets(f, 3 * k + 2)});
            orow.push_back(s.observed(f, k) > 0.5 ? 1 : 0);
        }
        targets.push_back(trow);
        observed.push_back(orow);
    }
    nlohmann::json j{{"frames", s.frames()}, {"joints", s.joints()}, {"targets", targets}, {"observed", observed}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << j.dump() << '\n';
}

#define POLYMOTION_INSTANTIATE(T) \
    template void explicit_guidance<T>(MatT<T>&, const SpatialSignal&, double, int, const FeatureStats*);

POLYMOTION_INSTANTIATE(float)
POLYMOTION_INSTANTIATE(double)

#undef POLYMOTION_INSTANTIATE

}  // namespace polymotion
