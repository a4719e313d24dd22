#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "somn/edf.hpp"

namespace somn {

// 5x5 integer counts, rows = truth, columns = prediction.
struct ConfusionMatrix {
    std::array<std::array<int64_t, kNumStages>, kNumStages> counts{};

    void add(int truth, int pred) {
        if (truth < 0 || truth >= kNumStages || pred < 0 || pred >= kNumStages)
            throw UsageError("confusion matrix: class index out of range");
        ++counts[static_cast<size_t>(truth)][static_cast<size_t>(pred)];
    }

    int64_t total() const {
        int64_t n = 0;
        for (const auto& row : counts)
            for (int64_t v : row) n += v;
        return n;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        for (size_t r = 0; r < kNumStages; ++r)
            for (size_t c = 0; c < kNumStages; ++c) counts[r][c] += o.counts[r][c];
        return *this;
    }
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred);

struct F1Scores {
    std::array<double, kNumStages> per_class{};
    double mf1 = 0.0;
};

// F1_c = 2 P_c R_c / (P_c + R_c) with 0/0 taken as 0; MF1 is the unweighted
// mean over the 5 classes.
F1Scores macro_f1(const ConfusionMatrix& cm);

}  // namespace somn
