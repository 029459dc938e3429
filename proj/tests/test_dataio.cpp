#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "wip/sequence.hpp"
#include "wip/synth.hpp"

using namespace wip;

namespace {

double bone_length_spread(const MotionSequence& seq, const SkeletonSpec& spec) {
    double worst = 0.0;
    for (const auto& [a, b] : spec.bones) {
        double mn = 1e300, mx = -1e300;
        for (const auto& f : seq.frames) {
            const Vec3& pa = f.points[static_cast<size_t>(a)];
            const Vec3& pb = f.points[static_cast<size_t>(b)];
            const double dx = pa[0] - pb[0], dy = pa[1] - pb[1], dz = pa[2] - pb[2];
            const double len = std::sqrt(dx * dx + dy * dy + dz * dz);
            mn = std::min(mn, len);
            mx = std::max(mx, len);
        }
        worst = std::max(worst, mx - mn);
    }
    return worst;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("skeleton: human spec invariants") {
    const SkeletonSpec s = SkeletonSpec::human();
    REQUIRE(s.num_joints() == 24);
    REQUIRE(s.num_sparse() == 6);
    REQUIRE(s.bones_form_connected_tree());
    REQUIRE(s.joint_index("pelvis") == 0);
    REQUIRE(s.joint_index("head") == 15);
    REQUIRE(s.sparse_with_anchor_indices().size() == 9);
    // feet vs knees toggle
    const SkeletonSpec k = SkeletonSpec::human(LowerBodyMode::knees);
    REQUIRE(std::find(k.sparse_indices.begin(), k.sparse_indices.end(), 4) != k.sparse_indices.end());
    REQUIRE(std::find(s.sparse_indices.begin(), s.sparse_indices.end(), 10) != s.sparse_indices.end());
    REQUIRE(s.anchor_targets[1][0] == 1.0);
    REQUIRE(s.anchor_targets[2][1] == 1.0);
}

TEST_CASE("generate_synthetic: walk produces 600 frames with rigid bones") {
    const MotionSequence seq = generate_synthetic(MotionKind::walk, 10.0, 60.0, 1);
    REQUIRE(seq.num_frames() == 600);
    REQUIRE(bone_length_spread(seq, SkeletonSpec::human()) < 1e-9);
}

TEST_CASE("generate_synthetic: squat pelvis oscillates with zero horizontal drift") {
    const MotionSequence seq = generate_synthetic(MotionKind::squat, 5.0, 60.0, 2);
    double zmin = 1e300, zmax = -1e300;
    for (const auto& f : seq.frames) {
        const Vec3& pelvis = f.points[0];
        REQUIRE(std::abs(pelvis[0]) < 1e-12);
        REQUIRE(std::abs(pelvis[1]) < 1e-12);
        zmin = std::min(zmin, pelvis[2]);
        zmax = std::max(zmax, pelvis[2]);
    }
    REQUIRE(zmax - zmin > 0.1);
    REQUIRE(bone_length_spread(seq, SkeletonSpec::human()) < 1e-9);
}

TEST_CASE("generate_synthetic: walk root travels more than 2 m in XY") {
    const MotionSequence seq = generate_synthetic(MotionKind::walk, 10.0, 60.0, 3);
    const Vec3& a = seq.frames.front().points[0];
    const Vec3& b = seq.frames.back().points[0];
    const double d = std::hypot(b[0] - a[0], b[1] - a[1]);
    REQUIRE(d > 2.0);
}

TEST_CASE("generate_synthetic: all kinds run and keep feet on or above ground") {
    for (MotionKind kind : {MotionKind::walk, MotionKind::arm_swing, MotionKind::squat,
                            MotionKind::turn, MotionKind::figure8}) {
        const MotionSequence seq = generate_synthetic(kind, 3.0, 60.0, 7);
        double zmin = 1e300;
        for (const auto& f : seq.frames)
            for (const auto& p : f.points) zmin = std::min(zmin, p[2]);
        CAPTURE(to_string(kind));
        REQUIRE(zmin > -1e-9);
        REQUIRE(zmin < 0.02);  // stance feet actually reach the floor
        REQUIRE(bone_length_spread(seq, SkeletonSpec::human()) < 1e-9);
    }
}

TEST_CASE("generate_synthetic: unknown kind rejected") {
    REQUIRE_THROWS_AS(motion_kind_from_string("moonwalk"), InvalidInputError);
    REQUIRE_THROWS_AS(generate_synthetic(MotionKind::walk, -1.0, 60.0, 0), InvalidInputError);
}

TEST_CASE("preprocess: head-pelvis distance normalized to 1, floor at z=0") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence raw = generate_synthetic(MotionKind::walk, 4.0, 60.0, 5);
    const MotionSequence pp = preprocess(raw, spec);
    double sum = 0.0, zmin = 1e300;
    const int head = spec.joint_index("head");
    for (const auto& f : pp.frames) {
        const Vec3& h = f.points[static_cast<size_t>(head)];
        const Vec3& p = f.points[0];
        sum += std::sqrt((h[0] - p[0]) * (h[0] - p[0]) + (h[1] - p[1]) * (h[1] - p[1]) +
                         (h[2] - p[2]) * (h[2] - p[2]));
        for (const auto& q : f.points) zmin = std::min(zmin, q[2]);
    }
    REQUIRE(sum / pp.num_frames() == doctest::Approx(1.0).epsilon(1e-9));
    REQUIRE(std::abs(zmin) < 1e-9);
    REQUIRE(pp.floor_aligned);
    REQUIRE(pp.scale > 0.4);
    REQUIRE(pp.scale < 0.7);
}

TEST_CASE("preprocess: idempotent") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence pp = preprocess(generate_synthetic(MotionKind::walk, 2.0, 60.0, 6), spec);
    const MotionSequence pp2 = preprocess(pp, spec);
    REQUIRE(pp2.scale == doctest::Approx(pp.scale).epsilon(1e-12));
    for (int t = 0; t < pp.num_frames(); ++t)
        for (int j = 0; j < pp.num_nodes(); ++j)
            for (int c = 0; c < 3; ++c)
                REQUIRE(std::abs(pp2.frames[static_cast<size_t>(t)].points[static_cast<size_t>(j)][static_cast<size_t>(c)] -
                                 pp.frames[static_cast<size_t>(t)].points[static_cast<size_t>(j)][static_cast<size_t>(c)]) < 1e-12);
}

TEST_CASE("preprocess: scale invariance") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence raw = generate_synthetic(MotionKind::arm_swing, 2.0, 60.0, 8);
    MotionSequence doubled = raw;
    for (auto& f : doubled.frames)
        for (auto& p : f.points)
            for (auto& c : p) c *= 2.0;
    const MotionSequence a = preprocess(raw, spec);
    const MotionSequence b = preprocess(doubled, spec);
    for (int t = 0; t < a.num_frames(); ++t)
        for (int j = 0; j < a.num_nodes(); ++j)
            for (int c = 0; c < 3; ++c)
                REQUIRE(a.frames[static_cast<size_t>(t)].points[static_cast<size_t>(j)][static_cast<size_t>(c)] ==
                        doctest::Approx(b.frames[static_cast<size_t>(t)].points[static_cast<size_t>(j)][static_cast<size_t>(c)])
                            .epsilon(1e-10));
    REQUIRE(b.scale == doctest::Approx(2.0 * a.scale).epsilon(1e-12));
}

TEST_CASE("preprocess: commutes with a global rotation about z") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence raw = generate_synthetic(MotionKind::walk, 2.0, 60.0, 9);
    const double a = 0.7;
    MotionSequence rotated = raw;
    for (auto& f : rotated.frames)
        for (auto& p : f.points)
            p = {p[0] * std::cos(a) - p[1] * std::sin(a), p[0] * std::sin(a) + p[1] * std::cos(a),
                 p[2]};
    const MotionSequence pa = preprocess(raw, spec);
    const MotionSequence pb = preprocess(rotated, spec);
    for (int t = 0; t < pa.num_frames(); ++t)
        for (int j = 0; j < pa.num_nodes(); ++j) {
            const Vec3& p = pa.frames[static_cast<size_t>(t)].points[static_cast<size_t>(j)];
            const Vec3 expect = {p[0] * std::cos(a) - p[1] * std::sin(a),
                                 p[0] * std::sin(a) + p[1] * std::cos(a), p[2]};
            const Vec3& q = pb.frames[static_cast<size_t>(t)].points[static_cast<size_t>(j)];
            for (int c = 0; c < 3; ++c)
                REQUIRE(q[static_cast<size_t>(c)] == doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-10));
        }
}

TEST_CASE("preprocess: zero head-pelvis distance rejected") {
    const SkeletonSpec spec = SkeletonSpec::human();
    MotionSequence seq;
    PoseFrame f;
    f.points.assign(24, Vec3{0, 0, 0});
    f.node_labels = spec.joint_names;
    seq.frames.push_back(f);
    REQUIRE_THROWS_AS(preprocess(seq, spec), DegenerateGeometryError);
}

TEST_CASE("attach_anchors: appends the three fixed nodes") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence pp = preprocess(generate_synthetic(MotionKind::walk, 2.0, 60.0, 10), spec);
    const MotionSequence an = attach_anchors(pp, spec);
    REQUIRE(an.num_nodes() == 27);
    for (const auto& f : an.frames) {
        REQUIRE(f.points[24] == Vec3{0, 0, 0});
        REQUIRE(f.points[25] == Vec3{1, 0, 0});
        REQUIRE(f.points[26] == Vec3{0, 1, 0});
    }
    // pwd of the anchor triple
    PoseFrame anchors;
    anchors.points = {an.frames[0].points[24], an.frames[0].points[25], an.frames[0].points[26]};
    anchors.node_labels = {"r_o", "r_x", "r_y"};
    const DistanceMatrix d = pwd(anchors);
    REQUIRE(d.at(0, 1) == doctest::Approx(1.0));
    REQUIRE(d.at(0, 2) == doctest::Approx(1.0));
    REQUIRE(d.at(1, 2) == doctest::Approx(std::sqrt(2.0)));
    REQUIRE_THROWS_AS(attach_anchors(an, spec), InvalidInputError);
}

TEST_CASE("make_samples: clean config matches the sparse clean submatrix") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence an =
        attach_anchors(preprocess(generate_synthetic(MotionKind::walk, 2.0, 60.0, 11), spec), spec);
    const auto samples = make_samples(an, spec, NoiseConfig{0.0, 1, 0}, 16);
    REQUIRE(!samples.empty());
    const auto& s = samples.front();
    const DistanceMatrix expect =
        sparse_submatrix(pwd(an.frames[static_cast<size_t>(s.frame_index)]), spec);
    REQUIRE(s.current_noisy.n == 9);
    for (size_t i = 0; i < expect.values.size(); ++i)
        REQUIRE(s.current_noisy.values[i] == doctest::Approx(expect.values[i]).epsilon(1e-15));
    REQUIRE(s.past_distances.size() == 16);
    REQUIRE(s.target_distances.n == 27);
    REQUIRE(s.target_pose.size() == 27);
}

TEST_CASE("make_samples: 600-frame walk with w=16 and 5-tap noise gives 580 samples") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence an =
        attach_anchors(preprocess(generate_synthetic(MotionKind::walk, 10.0, 60.0, 12), spec), spec);
    REQUIRE(an.num_frames() == 600);
    const auto samples = make_samples(an, spec, NoiseConfig{0.15, 5, 1}, 16);
    REQUIRE(static_cast<int>(samples.size()) == 600 - 16 - 2 * (5 / 2));
    // anchors never move in targets
    for (const auto& s : {samples.front(), samples.back()}) {
        REQUIRE(s.target_pose.points[24] == Vec3{0, 0, 0});
        REQUIRE(s.target_pose.points[25] == Vec3{1, 0, 0});
        REQUIRE(s.target_pose.points[26] == Vec3{0, 1, 0});
    }
}

TEST_CASE("make_samples: too-short sequence rejected") {
    const SkeletonSpec spec = SkeletonSpec::human();
    const MotionSequence an =
        attach_anchors(preprocess(generate_synthetic(MotionKind::walk, 0.3, 60.0, 13), spec), spec);
    REQUIRE_THROWS_AS(make_samples(an, spec, NoiseConfig{0.0, 5, 0}, 16), InvalidInputError);
}

TEST_CASE("save/load: synthetic walk round-trips exactly") {
    const std::string path = temp_path("wipseq_roundtrip.wipseq");
    const MotionSequence seq = generate_synthetic(MotionKind::figure8, 1.5, 60.0, 14);
    save_sequence(seq, path);
    const MotionSequence back = load_sequence(path);
    REQUIRE(back.num_frames() == seq.num_frames());
    REQUIRE(back.fps == seq.fps);
    REQUIRE(back.scale == seq.scale);
    for (int t = 0; t < seq.num_frames(); ++t)
        REQUIRE(back.frames[static_cast<size_t>(t)].points == seq.frames[static_cast<size_t>(t)].points);
    std::filesystem::remove(path);
}

TEST_CASE("load: wrong joint count against the human spec is a parse error") {
    const std::string path = temp_path("wipseq_wrongj.wipseq");
    std::ofstream out(path);
    out << "WIPSEQ v1\n";
    out << "fps=60 J=23 anchors=0 scale=1\n";
    for (int i = 0; i < 23; ++i) out << (i ? ",j" : "j") << i;
    out << "\n";
    for (int i = 0; i < 23 * 3; ++i) out << (i ? " " : "") << "0.0";
    out << "\n";
    out.close();
    REQUIRE_THROWS_AS(load_sequence(path, SkeletonSpec::human()), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("load: malformed header reports context") {
    const std::string path = temp_path("wipseq_bad.wipseq");
    std::ofstream out(path);
    out << "WIPSEQ v1\nfps=60 J=oops anchors=0 scale=1\n";
    out.close();
    REQUIRE_THROWS_AS(load_sequence(path), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("load: 20 Hz external sequence accepted") {
    const std::string path = temp_path("wipseq_20hz.wipseq");
    MotionSequence seq = generate_synthetic(MotionKind::walk, 1.0, 20.0, 15);
    save_sequence(seq, path);
    const MotionSequence back = load_sequence(path, SkeletonSpec::human());
    REQUIRE(back.fps == doctest::Approx(20.0));
    std::filesystem::remove(path);
}
