#pragma once

#include <span>
#include <vector>

#include "mfqe/nr_features.hpp"
#include "mfqe/svm.hpp"
#include "mfqe/video_io.hpp"

namespace mfqe {

struct DetectorConfig {
  int d_max = 6;                // largest allowed run of non-PQFs
  double prob_threshold = 0.5;  // raw label is p >= threshold

  void validate() const;
};

struct DetectionResult {
  std::vector<int> labels;    // 1 = PQF
  std::vector<double> probs;  // SVM probability of being a PQF
  bool refined = false;

  std::vector<int> pqf_indices() const;
};

struct DetectorMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// One row per frame of every compressed clip, labeled by the true PSNR curve.
svm::Dataset build_training_set(std::span<const ClipPair> pairs);

/// Rule 1: each run of adjacent 1s keeps only its most probable frame (earliest on ties).
/// Rule 2: each run of more than d_max 0s gets its most probable strictly-interior frame
/// set to 1, recursively, with positions -1 and N acting as bounding PQFs.
std::vector<int> refine_labels(std::span<const int> labels, std::span<const double> probs,
                               const DetectorConfig& cfg);

DetectionResult detect(const VideoClip& clip, const svm::Model& model, const DetectorConfig& cfg);
/// Same, from precomputed per-frame features.
DetectionResult detect(std::span<const SpatialFeatures36> per_frame, const svm::Model& model,
                       const DetectorConfig& cfg);

DetectorMetrics evaluate(std::span<const int> predicted, std::span<const int> truth);

/// Ground-truth PQF mask of a pair (strict local maxima of the true PSNR curve).
std::vector<int> true_pqf_labels(const ClipPair& pair);

}  // namespace mfqe
