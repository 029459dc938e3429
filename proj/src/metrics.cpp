#include "wip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace wip {

namespace {

double dist3(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

const char* MetricReport::csv_header() {
    return "pe_cm,eee_cm,gte_cm,aje_km_s2,gse_cm,contact_accuracy,cev3,tis";
}

std::string MetricReport::csv_row() const {
    std::string row = fmt(pe) + "," + fmt(eee) + "," + fmt(gte) + ",";
    row += aje ? fmt(*aje) : "";
    row += "," + fmt(gse) + ",";
    row += contact_accuracy ? fmt(*contact_accuracy) : "";
    row += ",";
    row += cev3 ? fmt(*cev3) : "";
    row += ",";
    row += tis ? fmt(*tis) : "";
    return row;
}

EvalPair EvalPair::make(const std::vector<PoseFrame>& pred, const std::vector<PoseFrame>& gt,
                        const SkeletonSpec& spec, double scale, double fps) {
    if (pred.empty() || pred.size() != gt.size())
        throw InvalidInputError("EvalPair: sequence length mismatch");
    const auto& labels = pred.front().node_labels;
    if (labels.empty()) throw InvalidInputError("EvalPair: predictions carry no node labels");

    // Match predicted nodes to ground-truth nodes by label.
    std::vector<int> gt_index;
    for (const auto& name : labels) {
        int found = -1;
        const auto& gl = gt.front().node_labels;
        for (size_t i = 0; i < gl.size(); ++i)
            if (gl[i] == name) {
                found = static_cast<int>(i);
                break;
            }
        if (found < 0) throw InvalidInputError("EvalPair: node '" + name + "' missing from ground truth");
        gt_index.push_back(found);
    }

    EvalPair ep;
    ep.pred = pred;
    ep.scale = scale;
    ep.fps = fps;
    ep.gt.reserve(gt.size());
    for (const auto& f : gt) {
        PoseFrame r;
        r.node_labels = labels;
        for (int gi : gt_index) r.points.push_back(f.points[static_cast<size_t>(gi)]);
        ep.gt.push_back(std::move(r));
    }

    const auto& anchor_names = SkeletonSpec::anchor_labels();
    std::vector<std::string> ee_names;
    for (int i : spec.end_effector_indices())
        ee_names.push_back(spec.joint_names[static_cast<size_t>(i)]);
    for (size_t s = 0; s < labels.size(); ++s) {
        const bool is_anchor =
            std::find(anchor_names.begin(), anchor_names.end(), labels[s]) != anchor_names.end();
        if (is_anchor) continue;
        ep.joint_slots.push_back(static_cast<int>(s));
        if (std::find(ee_names.begin(), ee_names.end(), labels[s]) != ee_names.end())
            ep.ee_slots.push_back(static_cast<int>(s));
        if (labels[s] == "pelvis") ep.root_slot = static_cast<int>(s);
    }
    if (ep.joint_slots.empty()) throw InvalidInputError("EvalPair: no body joints to score");
    return ep;
}

PositionalErrors positional_errors(const EvalPair& ep) {
    const double to_cm = ep.scale * 100.0;
    PositionalErrors r;
    double pe = 0.0, eee = 0.0, gte = 0.0;
    for (size_t t = 0; t < ep.pred.size(); ++t) {
        for (int s : ep.joint_slots)
            pe += dist3(ep.pred[t].points[static_cast<size_t>(s)],
                        ep.gt[t].points[static_cast<size_t>(s)]);
        for (int s : ep.ee_slots)
            eee += dist3(ep.pred[t].points[static_cast<size_t>(s)],
                         ep.gt[t].points[static_cast<size_t>(s)]);
        if (ep.root_slot >= 0)
            gte += dist3(ep.pred[t].points[static_cast<size_t>(ep.root_slot)],
                         ep.gt[t].points[static_cast<size_t>(ep.root_slot)]);
    }
    const double frames = static_cast<double>(ep.pred.size());
    r.pe = pe / (frames * static_cast<double>(ep.joint_slots.size())) * to_cm;
    r.eee = ep.ee_slots.empty() ? 0.0 : eee / (frames * static_cast<double>(ep.ee_slots.size())) * to_cm;
    r.gte = ep.root_slot < 0 ? 0.0 : gte / frames * to_cm;
    return r;
}

namespace {

// Mean third-difference jerk magnitude over frames and the given slots, m/s^3.
double mean_jerk(const std::vector<PoseFrame>& seq, const std::vector<int>& slots, double fps,
                 double scale) {
    const size_t frames = seq.size();
    const double f3 = fps * fps * fps;
    double acc = 0.0;
    int64_t count = 0;
    for (size_t t = 0; t + 3 < frames; ++t) {
        for (int s : slots) {
            double ss = 0.0;
            for (int c = 0; c < 3; ++c) {
                const size_t sc = static_cast<size_t>(c), sj = static_cast<size_t>(s);
                const double d = seq[t + 3].points[sj][sc] - 3.0 * seq[t + 2].points[sj][sc] +
                                 3.0 * seq[t + 1].points[sj][sc] - seq[t].points[sj][sc];
                ss += d * d;
            }
            acc += std::sqrt(ss) * f3 * scale;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

}  // namespace

std::optional<double> jitter_error(const EvalPair& ep) {
    if (ep.pred.size() < 4) return std::nullopt;
    const double jp = mean_jerk(ep.pred, ep.joint_slots, ep.fps, ep.scale);
    const double jg = mean_jerk(ep.gt, ep.joint_slots, ep.fps, ep.scale);
    return std::abs(jp - jg) / 1000.0;
}

double structure_error(const EvalPair& ep) {
    const double to_cm = ep.scale * 100.0;
    double acc = 0.0;
    int64_t count = 0;
    for (size_t t = 0; t < ep.pred.size(); ++t) {
        for (size_t a = 0; a < ep.joint_slots.size(); ++a)
            for (size_t b = a + 1; b < ep.joint_slots.size(); ++b) {
                const size_t i = static_cast<size_t>(ep.joint_slots[a]);
                const size_t j = static_cast<size_t>(ep.joint_slots[b]);
                acc += std::abs(dist3(ep.pred[t].points[i], ep.pred[t].points[j]) -
                                dist3(ep.gt[t].points[i], ep.gt[t].points[j]));
                ++count;
            }
    }
    return acc / static_cast<double>(count) * to_cm;
}

std::vector<std::array<bool, 2>> contact_labels(const std::vector<PoseFrame>& seq,
                                                const SkeletonSpec& spec, double scale, double fps,
                                                const ContactConfig& cc) {
    const auto pairs = spec.foot_contact_joints();
    const auto& labels = seq.front().node_labels;
    auto slot = [&](int joint) -> int {
        const std::string& name = spec.joint_names[static_cast<size_t>(joint)];
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == name) return static_cast<int>(i);
        return -1;
    };
    std::array<std::pair<int, int>, 2> slots;
    for (int f = 0; f < 2; ++f) {
        slots[static_cast<size_t>(f)] = {slot(pairs[static_cast<size_t>(f)].first),
                                         slot(pairs[static_cast<size_t>(f)].second)};
        if (slots[static_cast<size_t>(f)].first < 0 || slots[static_cast<size_t>(f)].second < 0)
            throw InvalidInputError("contact_labels: heel/toe joints missing from node set");
    }

    std::vector<std::array<bool, 2>> out(seq.size());
    for (size_t t = 0; t < seq.size(); ++t) {
        const size_t tv = t == 0 ? 1 : t;  // first frame borrows the first velocity
        for (int f = 0; f < 2; ++f) {
            bool contact = true;
            for (int which : {slots[static_cast<size_t>(f)].first, slots[static_cast<size_t>(f)].second}) {
                const size_t j = static_cast<size_t>(which);
                const double speed =
                    tv < seq.size()
                        ? dist3(seq[tv].points[j], seq[tv - 1].points[j]) * fps * scale
                        : 0.0;
                const double height = seq[t].points[j][2] * scale;
                contact = contact && speed < cc.max_speed && height < cc.max_height;
            }
            out[t][static_cast<size_t>(f)] = contact;
        }
    }
    return out;
}

std::optional<double> foot_contact_accuracy(const EvalPair& ep, const SkeletonSpec& spec,
                                            const ContactConfig& cc) {
    if (ep.pred.size() < 2) return std::nullopt;
    std::vector<std::array<bool, 2>> lp, lg;
    try {
        lp = contact_labels(ep.pred, spec, ep.scale, ep.fps, cc);
        lg = contact_labels(ep.gt, spec, ep.scale, ep.fps, cc);
    } catch (const InvalidInputError&) {
        return std::nullopt;  // node set lacks feet (e.g. knees-only baseline)
    }
    int64_t agree = 0;
    for (size_t t = 0; t < lp.size(); ++t)
        for (int f = 0; f < 2; ++f)
            if (lp[t][static_cast<size_t>(f)] == lg[t][static_cast<size_t>(f)]) ++agree;
    return static_cast<double>(agree) / static_cast<double>(2 * lp.size());
}

void drift_curves(const EvalPair& ep, DriftCurve& vs_time, DriftCurve& vs_distance) {
    vs_time = DriftCurve{};
    vs_distance = DriftCurve{};
    if (ep.root_slot < 0) return;
    const size_t root = static_cast<size_t>(ep.root_slot);
    const double to_cm = ep.scale * 100.0;
    double path = 0.0;
    for (size_t t = 0; t < ep.pred.size(); ++t) {
        const double err = dist3(ep.pred[t].points[root], ep.gt[t].points[root]) * to_cm;
        if (t > 0) path += dist3(ep.gt[t].points[root], ep.gt[t - 1].points[root]) * ep.scale;
        vs_time.x.push_back(static_cast<double>(t) / ep.fps);
        vs_time.y.push_back(err);
        vs_distance.x.push_back(path);
        vs_distance.y.push_back(err);
    }
}

MetricReport evaluate(const EvalPair& ep, const SkeletonSpec& spec, const ContactConfig& cc) {
    MetricReport r;
    const PositionalErrors pe = positional_errors(ep);
    r.pe = pe.pe;
    r.eee = pe.eee;
    r.gte = pe.gte;
    r.aje = jitter_error(ep);
    r.gse = structure_error(ep);
    r.contact_accuracy = foot_contact_accuracy(ep, spec, cc);
    drift_curves(ep, r.drift_vs_time, r.drift_vs_distance);
    return r;
}

}  // namespace wip
