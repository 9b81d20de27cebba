#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "dipa/errors.hpp"
#include "dipa/types.hpp"

namespace dipa {

// A trial succeeds when the reported identity differs from the true one; a
// missing face (no identity) counts as a success.
inline bool dodged(const TrialRecord& t) {
  return !t.predicted_identity || *t.predicted_identity != t.true_identity;
}

inline double attack_success_rate(const std::vector<TrialRecord>& trials) {
  if (trials.empty()) throw ValidationError("attack_success_rate: no trials");
  int successes = 0;
  for (const auto& t : trials) successes += dodged(t) ? 1 : 0;
  return static_cast<double>(successes) / static_cast<double>(trials.size());
}

inline double mean_confidence(const std::vector<TrialRecord>& trials) {
  if (trials.empty()) throw ValidationError("mean_confidence: no trials");
  double sum = 0.0;
  for (const auto& t : trials) sum += t.detection_confidence;
  return sum / static_cast<double>(trials.size());
}

inline double no_face_fraction(const std::vector<TrialRecord>& trials) {
  if (trials.empty()) throw ValidationError("no_face_fraction: no trials");
  int none = 0;
  for (const auto& t : trials) none += t.predicted_identity ? 0 : 1;
  return static_cast<double>(none) / static_cast<double>(trials.size());
}

// Aggregates the valid trials in `trials` into one report. Invalid trials are
// counted but excluded from every metric. Similarity columns keep the order
// in which verifier ids first appear.
inline EvaluationReport aggregate_trials(const std::vector<TrialRecord>& trials,
                                         const std::string& method,
                                         const std::string& subject) {
  std::vector<TrialRecord> valid;
  int invalid = 0;
  for (const auto& t : trials) {
    if (t.valid()) {
      valid.push_back(t);
    } else {
      ++invalid;
    }
  }
  if (valid.empty()) {
    throw ValidationError("no valid trials for method '" + method +
                          "', subject '" + subject + "'");
  }
  EvaluationReport r;
  r.method = method;
  r.subject = subject;
  r.trial_count = static_cast<int>(valid.size());
  r.invalid_count = invalid;
  for (const auto& t : valid) r.successes += dodged(t) ? 1 : 0;
  r.asr = attack_success_rate(valid);
  r.mean_confidence = mean_confidence(valid);
  r.no_face_fraction = no_face_fraction(valid);

  std::vector<std::pair<std::string, double>> sums;
  std::vector<int> counts;
  for (const auto& t : valid) {
    for (const auto& [id, value] : t.similarity) {
      std::size_t k = 0;
      while (k < sums.size() && sums[k].first != id) ++k;
      if (k == sums.size()) {
        sums.emplace_back(id, 0.0);
        counts.push_back(0);
      }
      sums[k].second += value;
      ++counts[k];
    }
  }
  for (std::size_t k = 0; k < sums.size(); ++k) {
    r.similarity.emplace_back(sums[k].first, sums[k].second / counts[k]);
  }
  return r;
}

// One report per (subject, method) in first-appearance order, followed by a
// pooled report per method.
inline std::vector<EvaluationReport> aggregate_by_subject_and_method(
    const std::vector<TrialRecord>& trials) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::vector<std::string> methods;
  for (const auto& t : trials) {
    std::pair<std::string, std::string> key{t.subject, t.method};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      keys.push_back(key);
    }
    if (std::find(methods.begin(), methods.end(), t.method) == methods.end()) {
      methods.push_back(t.method);
    }
  }
  std::vector<EvaluationReport> out;
  for (const auto& [subject, method] : keys) {
    std::vector<TrialRecord> group;
    for (const auto& t : trials) {
      if (t.subject == subject && t.method == method) group.push_back(t);
    }
    out.push_back(aggregate_trials(group, method, subject));
  }
  for (const auto& method : methods) {
    std::vector<TrialRecord> group;
    for (const auto& t : trials) {
      if (t.method == method) group.push_back(t);
    }
    out.push_back(aggregate_trials(group, method, kPooledSubject));
  }
  return out;
}

}  // namespace dipa
