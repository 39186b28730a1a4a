#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dvge/errors.hpp"

namespace dvge::fairness {

// Binary predictions and labels with a binary protected-group tag per row.
struct EvalBatch {
    std::vector<std::size_t> pred;
    std::vector<std::size_t> label;
    std::vector<std::uint8_t> group;

    void validate() const {
        if (pred.size() != label.size() || pred.size() != group.size())
            throw ShapeError("EvalBatch: pred/label/group sizes differ");
        if (pred.empty()) throw UndefinedMetric("EvalBatch: empty batch");
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] > 1 || label[i] > 1 || group[i] > 1)
                throw std::invalid_argument("EvalBatch: entries must be binary (row " +
                                            std::to_string(i) + ")");
        }
    }
};

inline double accuracy(const EvalBatch& b) {
    b.validate();
    std::size_t hit = 0;
    for (std::size_t i = 0; i < b.pred.size(); ++i) hit += b.pred[i] == b.label[i];
    return static_cast<double>(hit) / static_cast<double>(b.pred.size());
}

// Demographic parity gap: | P(pred=1 | group=0) - P(pred=1 | group=1) |.
// Undefined when either group is empty.
inline double delta_dp(const EvalBatch& b) {
    b.validate();
    std::size_t n[2] = {0, 0}, pos[2] = {0, 0};
    for (std::size_t i = 0; i < b.pred.size(); ++i) {
        ++n[b.group[i]];
        pos[b.group[i]] += b.pred[i];
    }
    if (n[0] == 0 || n[1] == 0)
        throw UndefinedMetric("delta_dp: a protected group has no members");
    return std::fabs(static_cast<double>(pos[0]) / static_cast<double>(n[0]) -
                     static_cast<double>(pos[1]) / static_cast<double>(n[1]));
}

// Equal opportunity gap via true positive rates:
// | P(pred=1 | label=1, group=0) - P(pred=1 | label=1, group=1) |.
// Undefined when either group has no positive labels.
inline double delta_eo(const EvalBatch& b) {
    b.validate();
    std::size_t npos[2] = {0, 0}, tp[2] = {0, 0};
    for (std::size_t i = 0; i < b.pred.size(); ++i) {
        if (b.label[i] != 1) continue;
        ++npos[b.group[i]];
        tp[b.group[i]] += b.pred[i] == 1;
    }
    if (npos[0] == 0 || npos[1] == 0)
        throw UndefinedMetric("delta_eo: a protected group has no positive labels");
    return std::fabs(static_cast<double>(tp[0]) / static_cast<double>(npos[0]) -
                     static_cast<double>(tp[1]) / static_cast<double>(npos[1]));
}

// The same gap expressed through false negative rates:
// | P(pred=0 | label=1, group=0) - P(pred=0 | label=1, group=1) |.
// Mathematically identical to delta_eo; kept as an independent route so the
// two can be cross-checked.
inline double delta_eo_fnr(const EvalBatch& b) {
    b.validate();
    std::size_t npos[2] = {0, 0}, fn[2] = {0, 0};
    for (std::size_t i = 0; i < b.pred.size(); ++i) {
        if (b.label[i] != 1) continue;
        ++npos[b.group[i]];
        fn[b.group[i]] += b.pred[i] == 0;
    }
    if (npos[0] == 0 || npos[1] == 0)
        throw UndefinedMetric("delta_eo_fnr: a protected group has no positive labels");
    return std::fabs(static_cast<double>(fn[0]) / static_cast<double>(npos[0]) -
                     static_cast<double>(fn[1]) / static_cast<double>(npos[1]));
}

struct FairnessReport {
    double accuracy = 0.0;
    double delta_dp = 0.0;
    double delta_eo = 0.0;
    // counts[group][label][pred]
    std::size_t counts[2][2][2] = {};

    static FairnessReport from(const EvalBatch& b) {
        FairnessReport r;
        r.accuracy = fairness::accuracy(b);
        r.delta_dp = fairness::delta_dp(b);
        r.delta_eo = fairness::delta_eo(b);
        for (std::size_t i = 0; i < b.pred.size(); ++i)
            ++r.counts[b.group[i]][b.label[i]][b.pred[i]];
        return r;
    }
};

// ---------------------------------------------------------------------------
// Accuracy/fairness Pareto front
// ---------------------------------------------------------------------------

// One candidate operating point: higher accuracy is better, lower
// disparity is better. `tag` identifies the run that produced it.
struct TradeoffPoint {
    double acc = 0.0;
    double delta = 0.0;
    std::string tag;
};

// a dominates b if it is at least as good on both axes and strictly
// better on one.
inline bool dominates(const TradeoffPoint& a, const TradeoffPoint& b) {
    return a.acc >= b.acc && a.delta <= b.delta && (a.acc > b.acc || a.delta < b.delta);
}

// Non-dominated subset: sorted by disparity ascending, accuracy strictly
// increasing, exact duplicates removed. Deterministic for any input order
// (ties broken by tag). O(n log n).
inline std::vector<TradeoffPoint> pareto_front(std::vector<TradeoffPoint> points) {
    for (const TradeoffPoint& p : points)
        if (!std::isfinite(p.acc) || !std::isfinite(p.delta))
            throw std::invalid_argument("pareto_front: non-finite point");
    std::sort(points.begin(), points.end(), [](const TradeoffPoint& a, const TradeoffPoint& b) {
        if (a.delta != b.delta) return a.delta < b.delta;
        if (a.acc != b.acc) return a.acc > b.acc;
        return a.tag < b.tag;
    });
    std::vector<TradeoffPoint> front;
    double best_acc = -std::numeric_limits<double>::infinity();
    for (const TradeoffPoint& p : points) {
        if (p.acc > best_acc) {
            front.push_back(p);
            best_acc = p.acc;
        }
    }
    return front;
}

// True when every point of `reference` is matched or beaten by some point
// of `candidate` (at most `reference`'s disparity with at least its
// accuracy).
inline bool weakly_dominates_front(const std::vector<TradeoffPoint>& candidate,
                                   const std::vector<TradeoffPoint>& reference) {
    for (const TradeoffPoint& r : reference) {
        bool covered = false;
        for (const TradeoffPoint& c : candidate)
            if (c.delta <= r.delta && c.acc >= r.acc) {
                covered = true;
                break;
            }
        if (!covered) return false;
    }
    return true;
}

}  // namespace dvge::fairness
