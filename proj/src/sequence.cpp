#include "wip/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace wip {

bool MotionSequence::has_anchors() const {
    if (frames.empty()) return false;
    const auto& labels = frames.front().node_labels;
    return !labels.empty() && labels.back() == SkeletonSpec::anchor_labels().back();
}

namespace {

double mean_head_pelvis(const MotionSequence& seq, const SkeletonSpec& spec) {
    const int head = spec.joint_index("head");
    const int pelvis = spec.joint_index("pelvis");
    if (head < 0 || pelvis < 0) throw InvalidInputError("preprocess: spec lacks head/pelvis");
    double sum = 0.0;
    for (const auto& f : seq.frames) {
        const Vec3& h = f.points[static_cast<size_t>(head)];
        const Vec3& p = f.points[static_cast<size_t>(pelvis)];
        const double dx = h[0] - p[0], dy = h[1] - p[1], dz = h[2] - p[2];
        sum += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return sum / static_cast<double>(seq.num_frames());
}

}  // namespace

MotionSequence preprocess(const MotionSequence& seq, const SkeletonSpec& spec) {
    if (seq.frames.empty()) throw InvalidInputError("preprocess: empty sequence");
    const double factor = mean_head_pelvis(seq, spec);
    if (factor < 1e-12)
        throw DegenerateGeometryError("preprocess: zero head-pelvis distance", 0);

    MotionSequence out = seq;
    double min_z = std::numeric_limits<double>::infinity();
    for (auto& f : out.frames)
        for (auto& p : f.points) {
            for (auto& c : p) c /= factor;
            min_z = std::min(min_z, p[2]);
        }
    for (auto& f : out.frames)
        for (auto& p : f.points) p[2] -= min_z;
    out.scale = seq.scale * factor;
    out.floor_aligned = true;
    return out;
}

MotionSequence attach_anchors(const MotionSequence& seq, const SkeletonSpec& spec) {
    if (seq.frames.empty()) throw InvalidInputError("attach_anchors: empty sequence");
    if (seq.has_anchors()) throw InvalidInputError("attach_anchors: anchors already present");
    if (!seq.floor_aligned) throw InvalidInputError("attach_anchors: sequence not preprocessed");

    MotionSequence out = seq;
    for (auto& f : out.frames) {
        for (int a = 0; a < spec.num_anchors(); ++a) {
            f.points.push_back(spec.anchor_targets[static_cast<size_t>(a)]);
            f.node_labels.push_back(SkeletonSpec::anchor_labels()[static_cast<size_t>(a)]);
        }
    }
    return out;
}

PoseFrame sparse_subframe(const PoseFrame& frame, const SkeletonSpec& spec) {
    if (frame.size() != spec.num_joints() + spec.num_anchors())
        throw InvalidInputError("sparse_subframe: frame size does not match anchored spec");
    PoseFrame out;
    for (int i : spec.sparse_with_anchor_indices()) {
        out.points.push_back(frame.points[static_cast<size_t>(i)]);
        out.node_labels.push_back(frame.node_labels[static_cast<size_t>(i)]);
    }
    return out;
}

DistanceMatrix sparse_submatrix(const DistanceMatrix& d, const SkeletonSpec& spec) {
    if (d.n != spec.num_joints() + spec.num_anchors())
        throw InvalidInputError("sparse_submatrix: matrix size does not match anchored spec");
    const auto idx = spec.sparse_with_anchor_indices();
    DistanceMatrix out(static_cast<int>(idx.size()), d.is_measured);
    for (size_t i = 0; i < idx.size(); ++i)
        for (size_t j = 0; j < idx.size(); ++j)
            out.at(static_cast<int>(i), static_cast<int>(j)) = d.at(idx[i], idx[j]);
    return out;
}

std::vector<WindowedSample> make_samples(const MotionSequence& seq, const SkeletonSpec& spec,
                                         const NoiseConfig& noise, int w) {
    noise.validate();
    if (!seq.has_anchors()) throw InvalidInputError("make_samples: anchors not attached");
    const int frames = seq.num_frames();
    if (frames <= w + noise.window)
        throw InvalidInputError("make_samples: sequence too short for window");

    std::vector<DistanceMatrix> dense;
    std::vector<DistanceMatrix> sparse_clean;
    dense.reserve(static_cast<size_t>(frames));
    sparse_clean.reserve(static_cast<size_t>(frames));
    for (const auto& f : seq.frames) {
        dense.push_back(pwd(f));
        sparse_clean.push_back(sparse_submatrix(dense.back(), spec));
    }
    const std::vector<DistanceMatrix> noisy = corrupt(sparse_clean, noise);

    // Only frames whose noise window is complete are usable targets.
    const int guard = noise.window / 2;
    std::vector<WindowedSample> samples;
    for (int t = guard + w; t <= frames - 1 - guard; ++t) {
        WindowedSample s;
        s.frame_index = t;
        s.past_distances.assign(sparse_clean.begin() + (t - w), sparse_clean.begin() + t);
        s.current_noisy = noisy[static_cast<size_t>(t)];
        s.target_pose = seq.frames[static_cast<size_t>(t)];
        s.target_distances = dense[static_cast<size_t>(t)];
        samples.push_back(std::move(s));
    }
    return samples;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_sequence(const MotionSequence& seq, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_sequence: cannot open " + path);
    const bool anchors = seq.has_anchors();
    const int n = seq.num_nodes();
    const int j = anchors ? n - 3 : n;
    out << "WIPSEQ v1\n";
    out << "fps=" << format_double(seq.fps) << " J=" << j << " anchors=" << (anchors ? 1 : 0)
        << " scale=" << format_double(seq.scale) << "\n";
    for (int i = 0; i < n; ++i) {
        if (i) out << ",";
        out << seq.frames.front().node_labels[static_cast<size_t>(i)];
    }
    out << "\n";
    for (const auto& f : seq.frames) {
        for (int i = 0; i < n; ++i) {
            const Vec3& p = f.points[static_cast<size_t>(i)];
            if (i) out << " ";
            out << format_double(p[0]) << " " << format_double(p[1]) << " " << format_double(p[2]);
        }
        out << "\n";
    }
}

MotionSequence load_sequence(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_sequence: cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line != "WIPSEQ v1")
        throw ParseError("load_sequence: line 1: expected 'WIPSEQ v1' in " + path);

    if (!std::getline(in, line)) throw ParseError("load_sequence: line 2 missing");
    MotionSequence seq;
    int j = -1, anchors = -1;
    {
        std::istringstream hs(line);
        std::string tok;
        while (hs >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos)
                throw ParseError("load_sequence: line 2: bad token '" + tok + "'");
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            try {
                if (key == "fps") seq.fps = std::stod(val);
                else if (key == "J") j = std::stoi(val);
                else if (key == "anchors") anchors = std::stoi(val);
                else if (key == "scale") seq.scale = std::stod(val);
                else throw ParseError("load_sequence: line 2: unknown key '" + key + "'");
            } catch (const std::invalid_argument&) {
                throw ParseError("load_sequence: line 2: bad value for '" + key + "'");
            }
        }
    }
    if (j <= 0 || anchors < 0 || anchors > 1 || seq.fps <= 0)
        throw ParseError("load_sequence: line 2: incomplete header");
    const int n = j + (anchors ? 3 : 0);

    if (!std::getline(in, line)) throw ParseError("load_sequence: line 3 missing");
    std::vector<std::string> labels;
    {
        std::istringstream ls(line);
        std::string name;
        while (std::getline(ls, name, ',')) labels.push_back(name);
    }
    if (static_cast<int>(labels.size()) != n)
        throw ParseError("load_sequence: line 3: expected " + std::to_string(n) +
                         " joint names, got " + std::to_string(labels.size()));

    int lineno = 3;
    double min_z = std::numeric_limits<double>::infinity();
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fs(line);
        PoseFrame f;
        f.node_labels = labels;
        f.points.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < 3; ++a)
                if (!(fs >> f.points[static_cast<size_t>(i)][static_cast<size_t>(a)]))
                    throw ParseError("load_sequence: line " + std::to_string(lineno) +
                                     ": expected " + std::to_string(3 * n) + " values");
        double extra;
        if (fs >> extra)
            throw ParseError("load_sequence: line " + std::to_string(lineno) + ": trailing values");
        for (const auto& p : f.points) min_z = std::min(min_z, p[2]);
        seq.frames.push_back(std::move(f));
    }
    if (seq.frames.empty()) throw ParseError("load_sequence: no frames in " + path);
    seq.floor_aligned = std::abs(min_z) < 1e-9;
    return seq;
}

MotionSequence load_sequence(const std::string& path, const SkeletonSpec& expect_spec) {
    MotionSequence seq = load_sequence(path);
    const int n = seq.num_nodes();
    const int body = seq.has_anchors() ? n - 3 : n;
    if (body != expect_spec.num_joints())
        throw ParseError("load_sequence: expected J=" + std::to_string(expect_spec.num_joints()) +
                         " joints, file has J=" + std::to_string(body));
    return seq;
}

}  // namespace wip
