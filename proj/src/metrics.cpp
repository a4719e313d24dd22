#include "somn/metrics.hpp"

namespace somn {

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred) {
    if (truth.size() != pred.size())
        throw UsageError("confusion: truth and prediction counts differ");
    ConfusionMatrix cm;
    for (size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
    return cm;
}

F1Scores macro_f1(const ConfusionMatrix& cm) {
    F1Scores out;
    double sum = 0.0;
    for (size_t c = 0; c < kNumStages; ++c) {
        int64_t tp = cm.counts[c][c];
        int64_t fp = 0, fn = 0;
        for (size_t r = 0; r < kNumStages; ++r) {
            if (r == c) continue;
            fp += cm.counts[r][c];
            fn += cm.counts[c][r];
        }
        const double precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
        const double recall = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
        const double f1 =
            (precision + recall) == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        out.per_class[c] = f1;
        sum += f1;
    }
    out.mf1 = sum / static_cast<double>(kNumStages);
    return out;
}

}  // namespace somn
