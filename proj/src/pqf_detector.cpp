#include "mfqe/pqf_detector.hpp"

#include <functional>

#include "mfqe/errors.hpp"
#include "mfqe/quality_metrics.hpp"

namespace mfqe {

void DetectorConfig::validate() const {
  if (d_max < 2) throw ArgumentError("pqf_detector.DetectorConfig: d_max must be >= 2");
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0))
    throw ArgumentError("pqf_detector.DetectorConfig: prob_threshold must lie in (0, 1)");
}

std::vector<int> DetectionResult::pqf_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> true_pqf_labels(const ClipPair& pair) {
  return find_peaks_valleys(quality_curve(pair)).pqf_mask();
}

svm::Dataset build_training_set(std::span<const ClipPair> pairs) {
  svm::Dataset data;
  for (const auto& pair : pairs) {
    pair.validate();
    if (pair.raw.size() < 3) throw ArgumentError("pqf_detector.build_training_set: clip shorter than 3 frames");
    const auto truth = true_pqf_labels(pair);
    const auto feats = clip_features36(pair.compressed);
    for (int n = 0; n < static_cast<int>(feats.size()); ++n) {
      const auto row = context_features180(feats, n);
      data.add(row, truth[static_cast<std::size_t>(n)]);
    }
  }
  return data;
}

std::vector<int> refine_labels(std::span<const int> labels, std::span<const double> probs,
                               const DetectorConfig& cfg) {
  cfg.validate();
  if (labels.size() != probs.size())
    throw ArgumentError("pqf_detector.refine_labels: " + std::to_string(labels.size()) + " labels vs " +
                        std::to_string(probs.size()) + " probabilities");
  const int n = static_cast<int>(labels.size());
  std::vector<int> out(labels.begin(), labels.end());
  for (auto& l : out) l = l != 0 ? 1 : 0;

  // Rule 1: collapse runs of consecutive PQFs onto their most probable member.
  for (int i = 0; i < n;) {
    if (out[static_cast<std::size_t>(i)] != 1) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < n && out[static_cast<std::size_t>(j + 1)] == 1) ++j;
    if (j > i) {
      int best = i;
      for (int k = i + 1; k <= j; ++k)
        if (probs[static_cast<std::size_t>(k)] > probs[static_cast<std::size_t>(best)]) best = k;
      for (int k = i; k <= j; ++k) out[static_cast<std::size_t>(k)] = k == best ? 1 : 0;
    }
    i = j + 1;
  }

  // Rule 2: split zero runs [lo, hi] longer than d_max at their most probable interior frame.
  std::function<void(int, int)> split = [&](int lo, int hi) {
    if (hi - lo + 1 <= cfg.d_max) return;
    int best = lo + 1;
    for (int k = lo + 2; k < hi; ++k)
      if (probs[static_cast<std::size_t>(k)] > probs[static_cast<std::size_t>(best)]) best = k;
    out[static_cast<std::size_t>(best)] = 1;
    split(lo, best - 1);
    split(best + 1, hi);
  };
  for (int i = 0; i < n;) {
    if (out[static_cast<std::size_t>(i)] != 0) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < n && out[static_cast<std::size_t>(j + 1)] == 0) ++j;
    split(i, j);
    i = j + 1;
  }
  return out;
}

DetectionResult detect(std::span<const SpatialFeatures36> per_frame, const svm::Model& model,
                       const DetectorConfig& cfg) {
  cfg.validate();
  if (per_frame.size() < 3) throw ArgumentError("pqf_detector.detect: clip shorter than 3 frames");
  DetectionResult r;
  r.probs.resize(per_frame.size());
  std::vector<int> raw(per_frame.size());
  for (int n = 0; n < static_cast<int>(per_frame.size()); ++n) {
    const auto row = context_features180(per_frame, n);
    r.probs[static_cast<std::size_t>(n)] = svm::predict_prob(model, row);
    raw[static_cast<std::size_t>(n)] = r.probs[static_cast<std::size_t>(n)] >= cfg.prob_threshold ? 1 : 0;
  }
  r.labels = refine_labels(raw, r.probs, cfg);
  r.refined = true;
  return r;
}

DetectionResult detect(const VideoClip& clip, const svm::Model& model, const DetectorConfig& cfg) {
  if (clip.size() < 3) throw ArgumentError("pqf_detector.detect: clip shorter than 3 frames");
  const auto feats = clip_features36(clip);
  return detect(feats, model, cfg);
}

DetectorMetrics evaluate(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ArgumentError("pqf_detector.evaluate: length mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool t = truth[i] != 0;
    tp += (p && t) ? 1 : 0;
    fp += (p && !t) ? 1 : 0;
    fn += (!p && t) ? 1 : 0;
  }
  DetectorMetrics m;
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

}  // namespace mfqe
