#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wip/edm.hpp"
#include "wip/skeleton.hpp"

namespace wip {

struct ContactConfig {
    double max_speed = 0.2;   // m/s
    double max_height = 0.10;  // m above the ground plane
};

struct DriftCurve {
    std::vector<double> x;  // elapsed seconds, or ground-truth path length (m)
    std::vector<double> y;  // root translation error (cm)
};

struct MetricReport {
    double pe = 0.0;   // cm
    double eee = 0.0;  // cm
    double gte = 0.0;  // cm
    std::optional<double> aje;  // km/s^2; absent for clips shorter than 4 frames
    double gse = 0.0;  // cm
    std::optional<double> contact_accuracy;
    DriftCurve drift_vs_time;
    DriftCurve drift_vs_distance;
    std::optional<double> cev3;
    std::optional<double> tis;

    static const char* csv_header();
    std::string csv_row() const;
};

// Subset view of a sequence: which prediction node maps to which ground-truth
// node, with metric roles resolved through the skeleton spec. Predictions may
// carry the full anchored set or only the sparse nodes; labels drive matching.
struct EvalPair {
    std::vector<PoseFrame> pred;
    std::vector<PoseFrame> gt;       // restricted to the predicted node set
    std::vector<int> joint_slots;    // non-anchor slots, for PE / GSE
    std::vector<int> ee_slots;       // end effectors, for EEE
    int root_slot = -1;              // pelvis, for GTE and drift
    double scale = 1.0;              // meters per normalized unit
    double fps = 60.0;

    static EvalPair make(const std::vector<PoseFrame>& pred, const std::vector<PoseFrame>& gt,
                         const SkeletonSpec& spec, double scale, double fps);
};

struct PositionalErrors {
    double pe = 0.0, eee = 0.0, gte = 0.0;  // cm
};

PositionalErrors positional_errors(const EvalPair& ep);
std::optional<double> jitter_error(const EvalPair& ep);  // AJE, km/s^2
double structure_error(const EvalPair& ep);              // GSE, cm

// Two-threshold plant detector evaluated on both sequences; returns the
// agreement fraction over (frame, foot) pairs. Needs the heel/toe joints in
// the predicted node set.
std::optional<double> foot_contact_accuracy(const EvalPair& ep, const SkeletonSpec& spec,
                                            const ContactConfig& cc = {});

// Boolean plant labels per frame for one sequence (outer: foot index 0/1).
std::vector<std::array<bool, 2>> contact_labels(const std::vector<PoseFrame>& seq,
                                                const SkeletonSpec& spec, double scale, double fps,
                                                const ContactConfig& cc = {});

void drift_curves(const EvalPair& ep, DriftCurve& vs_time, DriftCurve& vs_distance);

MetricReport evaluate(const EvalPair& ep, const SkeletonSpec& spec,
                      const ContactConfig& cc = {});

}  // namespace wip
