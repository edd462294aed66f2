#include "polymotion/losses.hpp"

#include <cmath>

namespace polymotion {

void LossWeights::validate() const {
    if (!(foot >= 0 && velocity >= 0 && bone >= 0 && distance_map >= 0))
        throw InvalidArgument("loss weights: must be >= 0");
    if (!(dm_threshold > 0)) throw InvalidArgument("loss weights: dm_threshold must be > 0");
}

LossParts& LossParts::operator+=(const LossParts& o) {
    rec += o.rec;
    foot += o.foot;
    vel += o.vel;
    bone += o.bone;
    dm += o.dm;
    total += o.total;
    return *this;
}

LossParts& LossParts::operator*=(double s) {
    rec *= s;
    foot *= s;
    vel *= s;
    bone *= s;
    dm *= s;
    total *= s;
    return *this;
}

namespace {

template <typename T>
void check_shapes(const MatT<T>& a, const MatT<T>& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument(std::string(what) + ": shape mismatch");
}

template <typename T>
Vec3 point(const MatT<T>& x, int f, int j) {
    return Vec3(x(f, 3 * j), x(f, 3 * j + 1), x(f, 3 * j + 2));
}

template <typename T>
void add_point(MatT<T>& g, int f, int j, const Vec3& v) {
    for (int a = 0; a < 3; ++a) g(f, 3 * j + a) += static_cast<T>(v(a));
}

}  // namespace

template <typename T>
double reconstruction_loss(const MatT<T>& x0, const MatT<T>& x0_hat, MatT<T>* grad, double scale) {
    check_shapes(x0, x0_hat, "reconstruction_loss");
    const double n = static_cast<double>(x0.size());
    double sum = 0;
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        const double e = static_cast<double>(x0_hat.data()[i]) - x0.data()[i];
        sum += e * e;
        if (grad) grad->data()[i] += static_cast<T>(scale * 2 * e / n);
    }
    return sum / n;
}

template <typename T>
double velocity_loss(const MatT<T>& x0, const MatT<T>& x0_hat, int joints, MatT<T>* grad, double scale) {
    check_shapes(x0, x0_hat, "velocity_loss");
    const int F = static_cast<int>(x0.rows());
    if (F < 2) return 0.0;
    const double n = static_cast<double>(F - 1) * joints;
    double sum = 0;
    for (int f = 1; f < F; ++f) {
        for (int j = 0; j < joints; ++j) {
            const Vec3 e = (point(x0_hat, f, j) - point(x0_hat, f - 1, j)) - (point(x0, f, j) - point(x0, f - 1, j));
            sum += e.squaredNorm();
            if (grad) {
                add_point(*grad, f, j, scale * 2 * e / n);
                add_point(*grad, f - 1, j, -scale * 2 * e / n);
            }
        }
    }
    return sum / n;
}

template <typename T>
double foot_loss(const MatT<T>& x0, const MatT<T>& x0_hat, const SkeletonDef& skeleton, MatT<T>* grad,
                 double scale) {
    check_shapes(x0, x0_hat, "foot_loss");
    const int J = skeleton.joint_count;
    const int F = static_cast<int>(x0.rows());
    const int c0 = channels::contacts(J);
    int count = 0;
    for (int f = 1; f < F; ++f)
        for (int c = 0; c < 4; ++c)
            if (x0(f, c0 + c) > T(0.5)) ++count;
    if (count == 0) return 0.0;
    double sum = 0;
    for (int f = 1; f < F; ++f) {
        for (int c = 0; c < 4; ++c) {
            if (!(x0(f, c0 + c) > T(0.5))) continue;
            const int j = skeleton.foot_joints[c];
            const Vec3 d = point(x0_hat, f, j) - point(x0_hat, f - 1, j);
            sum += d.squaredNorm();
            if (grad) {
                add_point(*grad, f, j, scale * 2 * d / count);
                add_point(*grad, f - 1, j, -scale * 2 * d / count);
            }
        }
    }
    return sum / count;
}

template <typename T>
double bone_loss(const MatT<T>& x0_hat, const SkeletonDef& skeleton, MatT<T>* grad, double scale) {
    const int J = skeleton.joint_count;
    const int F = static_cast<int>(x0_hat.rows());
    const int bones = J - 1;
    if (bones < 1) return 0.0;
    const double n = static_cast<double>(F) * bones;
    double sum = 0;
    for (int f = 0; f < F; ++f) {
        for (int j = 0; j < J; ++j) {
            const int p = skeleton.parent[j];
            if (p < 0) continue;
            const Vec3 d = point(x0_hat, f, j) - point(x0_hat, f, p);
            const double len = d.norm();
            const double e = len - skeleton.bone_length[j];
            sum += e * e;
            if (grad && len > 1e-12) {
                const Vec3 g = scale * 2 * e / n * d / len;
                add_point(*grad, f, j, g);
                add_point(*grad, f, p, -g);
            }
        }
    }
    return sum / n;
}

template <typename T>
double distance_map_loss(const MatT<T>& x0, const MatT<T>& x0_hat, const std::vector<const MatT<T>*>& conditions,
                         int joints, double threshold, MatT<T>* grad, double scale) {
    check_shapes(x0, x0_hat, "distance_map_loss");
    if (conditions.empty()) return 0.0;
    const int F = static_cast<int>(x0.rows());
    const double n_cond = static_cast<double>(conditions.size());
    double total = 0;
    for (const MatT<T>* cp : conditions) {
        const MatT<T>& c = *cp;
        check_shapes(x0, c, "distance_map_loss");
        double masked = 0;
        for (int f = 0; f < F; ++f)
            for (int j = 0; j < joints; ++j)
                for (int k = 0; k < joints; ++k)
                    if ((point(x0, f, j) - point(c, f, k)).norm() < threshold) masked += 1;
        if (masked == 0) continue;
        double sum = 0;
        for (int f = 0; f < F; ++f) {
            for (int j = 0; j < joints; ++j) {
                for (int k = 0; k < joints; ++k) {
                    const double gt = (point(x0, f, j) - point(c, f, k)).norm();
                    if (!(gt < threshold)) continue;
                    const Vec3 d = point(x0_hat, f, j) - point(c, f, k);
                    const double pred = d.norm();
                    const double e = pred - gt;
                    sum += e * e;
                    if (grad && pred > 1e-12) add_point(*grad, f, j, scale * 2 * e / masked / n_cond * d / pred);
                }
            }
        }
        total += sum / masked;
    }
    return total / n_cond;
}

template <typename T>
LossParts motion_loss(const MatT<T>& x0, const MatT<T>& x0_hat, const SkeletonDef* skeleton, const LossWeights& w,
                      const std::vector<const MatT<T>*>& conditions, MatT<T>* grad, double scale,
                      const FeatureStats* stats) {
    check_shapes(x0, x0_hat, "motion_loss");
    if (grad && (grad->rows() != x0.rows() || grad->cols() != x0.cols()))
        throw InvalidArgument("motion_loss: gradient shape mismatch");
    const bool geometric = w.foot > 0 || w.velocity > 0 || w.bone > 0 || w.distance_map > 0;
    if (geometric && (!skeleton || pose_dim(skeleton->joint_count) != x0.cols()))
        throw InvalidArgument("motion_loss: geometric terms need a skeleton matching the feature width");
    LossParts p;
    p.rec = reconstruction_loss(x0, x0_hat, grad, scale);
    p.total = p.rec;
    if (!geometric) return p;

    MatT<T> raw_x0, raw_hat;
    if (stats) {
        raw_x0 = stats->denormalize(x0);
        raw_hat = stats->denormalize(x0_hat);
    }
    const MatT<T>& gx0 = stats ? raw_x0 : x0;
    const MatT<T>& ghat = stats ? raw_hat : x0_hat;
    MatT<T> geo_grad;
    MatT<T>* g = grad;
    if (grad && stats) {
        geo_grad = MatT<T>::Zero(x0.rows(), x0.cols());
        g = &geo_grad;
    }
    const int J = skeleton->joint_count;
    if (w.foot > 0) {
        p.foot = foot_loss(gx0, ghat, *skeleton, g, scale * w.foot);
        p.total += w.foot * p.foot;
    }
    if (w.velocity > 0) {
        p.vel = velocity_loss(gx0, ghat, J, g, scale * w.velocity);
        p.total += w.velocity * p.vel;
    }
    if (w.bone > 0) {
        p.bone = bone_loss(ghat, *skeleton, g, scale * w.bone);
        p.total += w.bone * p.bone;
    }
    if (w.distance_map > 0) {
        p.dm = distance_map_loss(gx0, ghat, conditions, J, w.dm_threshold, g, scale * w.distance_map);
        p.total += w.distance_map * p.dm;
    }
    if (grad && stats) {
        const auto sd = stats->std.cast<T>();
        *grad += (geo_grad.array().rowwise() * sd.row(0).array()).matrix();
    }
    return p;
}

FeatureStats FeatureStats::identity(int dim) { return {Mat::Zero(1, dim), Mat::Ones(1, dim)}; }

FeatureStats FeatureStats::fit(const std::vector<const Mat*>& motions, double min_std) {
    if (motions.empty()) throw InvalidArgument("FeatureStats::fit: no motions");
    const auto D = motions.front()->cols();
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(D), sq = Eigen::RowVectorXd::Zero(D);
    double rows = 0;
    for (const Mat* m : motions) {
        if (m->cols() != D) throw InvalidArgument("FeatureStats::fit: width mismatch");
        sum += m->colwise().sum();
        rows += static_cast<double>(m->rows());
    }
    const Eigen::RowVectorXd mean = sum / rows;
    for (const Mat* m : motions) sq += (m->rowwise() - mean).array().square().matrix().colwise().sum();
    Eigen::RowVectorXd sd = (sq / rows).array().sqrt().max(min_std).matrix();
    return {mean, sd};
}

template <typename T>
MatT<T> FeatureStats::normalize(const MatT<T>& x) const {
    if (x.cols() != mean.cols()) throw InvalidArgument("normalize: width mismatch");
    const auto m = mean.cast<T>();
    const auto s = std.cast<T>();
    return ((x.rowwise() - m.row(0)).array().rowwise() / s.row(0).array()).matrix();
}

template <typename T>
MatT<T> FeatureStats::denormalize(const MatT<T>& x) const {
    if (x.cols() != mean.cols()) throw InvalidArgument("denormalize: width mismatch");
    const auto m = mean.cast<T>();
    const auto s = std.cast<T>();
    return ((x.array().rowwise() * s.row(0).array()).matrix().rowwise() + m.row(0)).eval();
}

#define POLYMOTION_INSTANTIATE(T)                                                                                    \
    template double reconstruction_loss<T>(const MatT<T>&, const MatT<T>&, MatT<T>*, double);                        \
    template double velocity_loss<T>(const MatT<T>&, const MatT<T>&, int, MatT<T>*, double);                        \
    template double foot_loss<T>(const MatT<T>&, const MatT<T>&, const SkeletonDef&, MatT<T>*, double);              \
    template double bone_loss<T>(const MatT<T>&, const SkeletonDef&, MatT<T>*, double);                              \
    template double distance_map_loss<T>(const MatT<T>&, const MatT<T>&, const std::vector<const MatT<T>*>&, int,    \
                                         double, MatT<T>*, double);                                                  \
    template LossParts motion_loss<T>(const MatT<T>&, const MatT<T>&, const SkeletonDef*, const LossWeights&,        \
                                      const std::vector<const MatT<T>*>&, MatT<T>*, double, const FeatureStats*);    \
    template MatT<T> FeatureStats::normalize<T>(const MatT<T>&) const;                                               \
    template MatT<T> FeatureStats::denormalize<T>(const MatT<T>&) const;

POLYMOTION_INSTANTIATE(float)
POLYMOTION_INSTANTIATE(double)

#undef POLYMOTION_INSTANTIATE

}  // namespace polymotion
