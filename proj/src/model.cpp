#include "polymotion/model.hpp"

namespace polymotion {

std::string to_string(TextMode m) { return m == TextMode::interactive ? "interactive" : "single"; }

TextMode parse_text_mode(const std::string& s) {
    if (s == "interactive") return TextMode::interactive;
    if (s == "single") return TextMode::single;
    throw InvalidArgument("unknown text mode '" + s + "'");
}

nlohmann::json skeleton_to_json(const SkeletonDef& s) {
    nlohmann::json offsets = nlohmann::json::array();
    for (const Vec3& v : s.rest_offset) offsets.push_back({v.x(), v.y(), v.z()});
    return {{"joint_count", s.joint_count}, {"parent", s.parent},          {"bone_length", s.bone_length},
            {"rest_offset", offsets},       {"foot_joints", s.foot_joints}, {"fps", s.fps}};
}

SkeletonDef skeleton_from_json(const nlohmann::json& j) {
    SkeletonDef s;
    s.joint_count = j.at("joint_count").get<int>();
    s.parent = j.at("parent").get<std::vector<int>>();
    s.bone_length = j.at("bone_length").get<std::vector<double>>();
    for (const auto& v : j.at("rest_offset")) s.rest_offset.emplace_back(v.at(0), v.at(1), v.at(2));
    s.foot_joints = j.at("foot_joints").get<std::array<int, 4>>();
    s.fps = j.at("fps").get<double>();
    s.validate();
    return s;
}

namespace {

nlohmann::json row_to_json(const Mat& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

Mat row_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    Mat m(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
    return m;
}

}  // namespace

Checkpoint to_checkpoint(const Model& m, const std::string& stage) {
    Checkpoint c;
    c.stage = stage;
    c.arrays.merge_with_prefix(m.gen, "gen.");
    if (m.inter) c.arrays.merge_with_prefix(*m.inter, "inter.");
    const NetDims& d = m.dims;
    c.meta["dims"] = {{"pose_dim", d.pose_dim}, {"joints", d.joints},         {"hidden", d.hidden},
                      {"heads", d.heads},       {"blocks", d.blocks},         {"max_frames", d.max_frames},
                      {"text_dim", d.text_dim}};
    c.meta["skeleton"] = m.skeleton ? skeleton_to_json(*m.skeleton) : nlohmann::json(nullptr);
    c.meta["stats"] = {{"mean", row_to_json(m.stats.mean)}, {"std", row_to_json(m.stats.std)}};
    c.meta["diffusion_steps"] = m.diffusion_steps;
    c.meta["schedule"] = m.schedule == ScheduleKind::cosine ? "cosine" : "linear";
    c.meta["text_vocab"] = m.text_vocab;
    c.meta["text_seed"] = m.text_seed;
    c.meta["text_mode"] = to_string(m.text_mode);
    c.meta["interaction_steps"] = m.interaction_steps;
    return c;
}

Model model_from_checkpoint(const Checkpoint& c) {
    Model m;
    try {
        const auto& d = c.meta.at("dims");
        m.dims.pose_dim = d.at("pose_dim");
        m.dims.joints = d.at("joints");
        m.dims.hidden = d.at("hidden");
        m.dims.heads = d.at("heads");
        m.dims.blocks = d.at("blocks");
        m.dims.max_frames = d.at("max_frames");
        m.dims.text_dim = d.at("text_dim");
        m.dims.validate();
        if (!c.meta.at("skeleton").is_null()) m.skeleton = skeleton_from_json(c.meta.at("skeleton"));
        m.stats.mean = row_from_json(c.meta.at("stats").at("mean"));
        m.stats.std = row_from_json(c.meta.at("stats").at("std"));
        m.diffusion_steps = c.meta.at("diffusion_steps");
        m.schedule = parse_schedule_kind(c.meta.at("schedule").get<std::string>());
        m.text_vocab = c.meta.at("text_vocab");
        m.text_seed = c.meta.at("text_seed");
        m.text_mode = parse_text_mode(c.meta.at("text_mode").get<std::string>());
        m.interaction_steps = c.meta.value("interaction_steps", 0L);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint is missing model metadata: ") + e.what());
    }
    m.gen = c.arrays.with_prefix_removed("gen.");
    ParamSet<float> inter = c.arrays.with_prefix_removed("inter.");
    if (!inter.arrays().empty()) m.inter = std::move(inter);
    if (m.gen.arrays().empty()) throw IoError("checkpoint holds no generation parameters");
    return m;
}

}  // namespace polymotion
