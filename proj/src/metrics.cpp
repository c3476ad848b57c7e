#include "claw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "claw/text.hpp"

namespace claw::metrics {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngram_counts(const Tokens& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i) + n)];
  }
  return counts;
}

struct BleuStats {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long cand_len = 0;
  long ref_len = 0;

  void add(const BleuStats& o) {
    for (int n = 0; n < 4; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    cand_len += o.cand_len;
    ref_len += o.ref_len;
  }
};

BleuStats bleu_stats(const Tokens& cand, const std::vector<Tokens>& refs) {
  BleuStats s;
  s.cand_len = static_cast<long>(cand.size());
  long best_diff = -1;
  for (const auto& r : refs) {
    long len = static_cast<long>(r.size());
    long diff = std::labs(len - s.cand_len);
    if (best_diff < 0 || diff < best_diff || (diff == best_diff && len < s.ref_len)) {
      best_diff = diff;
      s.ref_len = len;
    }
  }
  for (int n = 1; n <= 4; ++n) {
    auto c = ngram_counts(cand, n);
    std::map<std::vector<std::string>, int> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
    }
    for (const auto& [g, k] : c) {
      s.totals[n - 1] += k;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) s.matches[n - 1] += std::min(k, it->second);
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s, BleuOptions opts) {
  if (s.cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    double m = static_cast<double>(s.matches[n]);
    double t = static_cast<double>(s.totals[n]);
    if (opts.smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  double bp = s.cand_len < s.ref_len
                  ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.cand_len))
                  : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

std::vector<Tokens> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<Tokens> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tokenize(t));
  return out;
}

Tokens nonempty_tokens(const std::string& text, const char* which) {
  auto t = tokenize(text);
  if (t.empty()) throw EmptyInput(std::string(which) + " is empty after tokenization");
  return t;
}

}  // namespace

double bleu4(std::span<const std::string> candidates, std::span<const std::string> references, BleuOptions opts) {
  if (candidates.size() != references.size()) throw LengthMismatch("candidate and reference counts differ");
  std::vector<std::vector<std::string>> sets;
  for (const auto& r : references) sets.push_back({r});
  return bleu4(candidates, std::span<const std::vector<std::string>>(sets), opts);
}

double bleu4(std::span<const std::string> candidates, std::span<const std::vector<std::string>> reference_sets,
             BleuOptions opts) {
  if (candidates.size() != reference_sets.size()) throw LengthMismatch("candidate and reference counts differ");
  if (candidates.empty()) throw LengthMismatch("BLEU needs at least one candidate");
  BleuStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    total.add(bleu_stats(tokenize(candidates[i]), tokenize_all(reference_sets[i])));
  }
  return bleu_from_stats(total, opts);
}

double sentence_bleu4_mean(std::span<const std::string> candidates,
                           std::span<const std::vector<std::string>> reference_sets, BleuOptions opts) {
  if (candidates.size() != reference_sets.size()) throw LengthMismatch("candidate and reference counts differ");
  if (candidates.empty()) throw LengthMismatch("BLEU needs at least one candidate");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += bleu_from_stats(bleu_stats(tokenize(candidates[i]), tokenize_all(reference_sets[i])), opts);
  }
  return sum / static_cast<double>(candidates.size());
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const std::string& candidate, const std::string& reference) {
  auto c = nonempty_tokens(candidate, "candidate");
  auto r = nonempty_tokens(reference, "reference");
  auto lcs = static_cast<double>(lcs_length(c, r));
  if (lcs == 0.0) return 0.0;
  double p = lcs / static_cast<double>(c.size());
  double rec = lcs / static_cast<double>(r.size());
  double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * rec / (rec + b2 * p);
}

double rouge_l(const std::string& candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw EmptyInput("no reference");
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, rouge_l(candidate, r));
  return best;
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  std::vector<bool> used_c(candidate.size(), false);
  std::vector<bool> used_r(reference.size(), false);
  MeteorAlignment out;
  for (;;) {
    std::size_t best_len = 0, best_i = 0, best_j = 0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (used_c[i]) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        std::size_t len = 0;
        while (i + len < candidate.size() && j + len < reference.size() && !used_c[i + len] && !used_r[j + len] &&
               candidate[i + len] == reference[j + len]) {
          ++len;
        }
        if (len > best_len) {
          best_len = len;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_len == 0) break;
    for (std::size_t k = 0; k < best_len; ++k) {
      used_c[best_i + k] = true;
      used_r[best_j + k] = true;
      out.pairs.emplace_back(static_cast<int>(best_i + k), static_cast<int>(best_j + k));
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  out.matches = static_cast<int>(out.pairs.size());
  for (std::size_t k = 0; k < out.pairs.size(); ++k) {
    if (k == 0 || out.pairs[k].first != out.pairs[k - 1].first + 1 || out.pairs[k].second != out.pairs[k - 1].second + 1) {
      ++out.chunks;
    }
  }
  return out;
}

double meteor(const std::string& candidate, const std::string& reference) {
  auto c = nonempty_tokens(candidate, "candidate");
  auto r = nonempty_tokens(reference, "reference");
  auto a = meteor_align(c, r);
  if (a.matches == 0) return 0.0;
  double m = a.matches;
  double p = m / static_cast<double>(c.size());
  double rec = m / static_cast<double>(r.size());
  double fmean = 10.0 * p * rec / (rec + 9.0 * p);
  double frag = static_cast<double>(a.chunks) / m;
  double penalty = 0.5 * frag * frag * frag;
  return fmean * (1.0 - penalty);
}

double meteor(const std::string& candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw EmptyInput("no reference");
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, meteor(candidate, r));
  return best;
}

std::vector<double> cider_per_case(std::span<const std::string> candidates,
                                   std::span<const std::vector<std::string>> reference_sets, int n_max) {
  if (candidates.size() != reference_sets.size()) throw LengthMismatch("candidate and reference counts differ");
  if (candidates.size() < 2) throw CorpusTooSmall("CIDEr needs at least two cases for document frequencies");
  if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  const std::size_t n_cases = candidates.size();

  // counts[case][ref][n-1]
  std::vector<std::vector<std::vector<NgramCounts>>> ref_counts(n_cases);
  std::map<std::vector<std::string>, int> doc_freq;
  for (std::size_t i = 0; i < n_cases; ++i) {
    std::set<std::vector<std::string>> seen;
    for (const auto& ref : reference_sets[i]) {
      auto toks = tokenize(ref);
      std::vector<NgramCounts> per_n;
      for (int n = 1; n <= n_max; ++n) {
        per_n.push_back(ngram_counts(toks, n));
        for (const auto& [g, k] : per_n.back()) seen.insert(g);
      }
      ref_counts[i].push_back(std::move(per_n));
    }
    for (const auto& g : seen) ++doc_freq[g];
  }
  const double log_n = std::log(static_cast<double>(n_cases));
  auto idf = [&](const std::vector<std::string>& g) {
    auto it = doc_freq.find(g);
    return log_n - std::log(static_cast<double>(it == doc_freq.end() ? 1 : it->second));
  };
  auto cosine = [&](const NgramCounts& a, const NgramCounts& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, k] : a) {
      double w = k * idf(g);
      na += w * w;
      auto it = b.find(g);
      if (it != b.end()) dot += w * (it->second * idf(g));
    }
    for (const auto& [g, k] : b) {
      double w = k * idf(g);
      nb += w * w;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  std::vector<double> scores(n_cases, 0.0);
  for (std::size_t i = 0; i < n_cases; ++i) {
    if (ref_counts[i].empty()) throw EmptyInput("case without references");
    auto toks = tokenize(candidates[i]);
    double sum_n = 0.0;
    for (int n = 1; n <= n_max; ++n) {
      auto c = ngram_counts(toks, n);
      double sum_r = 0.0;
      for (const auto& r : ref_counts[i]) sum_r += cosine(c, r[static_cast<std::size_t>(n - 1)]);
      sum_n += sum_r / static_cast<double>(ref_counts[i].size());
    }
    scores[i] = 10.0 * sum_n / static_cast<double>(n_max);
  }
  return scores;
}

double cider(std::span<const std::string> candidates, std::span<const std::vector<std::string>> reference_sets,
             int n_max) {
  auto per_case = cider_per_case(candidates, reference_sets, n_max);
  double sum = 0.0;
  for (double s : per_case) sum += s;
  return sum / static_cast<double>(per_case.size());
}

LabelAccuracy multilabel_accuracy(std::span<const LabelSet> preds, std::span<const LabelSet> gts) {
  if (preds.size() != gts.size()) throw LengthMismatch("prediction and ground-truth counts differ");
  if (preds.empty()) throw LengthMismatch("accuracy needs at least one case");
  LabelAccuracy out;
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    auto label = kAllPathologies[k];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i][label] == gts[i][label] ? 1 : 0;
    out.per_label[k] = static_cast<double>(correct) / static_cast<double>(preds.size());
  }
  double sum = 0.0;
  for (double v : out.per_label) sum += v;
  out.avg = sum / static_cast<double>(kNumPathologies);
  return out;
}

MetricReport evaluate(std::span<const EvalRecord> records, EvalOptions opts) {
  if (records.empty()) throw LengthMismatch("no records to evaluate");
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  std::vector<LabelSet> preds, gts;
  MetricReport report;
  for (const auto& r : records) {
    cands.push_back(r.candidate);
    refs.push_back(r.references);
    preds.push_back(r.pred_labels);
    gts.push_back(r.gt_labels);
    report.rouge_l += rouge_l(r.candidate, r.references);
    report.meteor += meteor(r.candidate, r.references);
  }
  const auto n = static_cast<double>(records.size());
  report.cases = static_cast<int>(records.size());
  report.rouge_l /= n;
  report.meteor /= n;
  report.bleu4 = opts.bleu_mode == BleuMode::Corpus ? bleu4(cands, refs, opts.bleu)
                                                    : sentence_bleu4_mean(cands, refs, opts.bleu);
  report.cider = records.size() >= 2 ? cider(cands, refs) : 0.0;
  auto acc = multilabel_accuracy(preds, gts);
  report.per_label_acc = acc.per_label;
  report.avg_acc = acc.avg;
  return report;
}

json to_json(const MetricReport& report) {
  json per_label = json::object();
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    per_label[std::string(to_string(kAllPathologies[k]))] = report.per_label_acc[k];
  }
  return json{{"bleu4", report.bleu4},   {"rouge_l", report.rouge_l},     {"meteor", report.meteor},
              {"cider", report.cider},   {"per_label_acc", per_label},    {"avg_acc", report.avg_acc},
              {"cases", report.cases}};
}

std::string format_table(const MetricReport& report) {
  std::ostringstream out;
  char line[96];
  auto row = [&](std::string_view name, double value) {
    std::snprintf(line, sizeof line, "%-20s %8.1f\n", std::string(name).c_str(), 100.0 * value);
    out << line;
  };
  std::snprintf(line, sizeof line, "%-20s %8s\n", "metric", "x100");
  out << line;
  row("BLEU-4", report.bleu4);
  row("ROUGE-L", report.rouge_l);
  row("METEOR", report.meteor);
  row("CIDEr", report.cider);
  for (std::size_t k = 0; k < kNumPathologies; ++k) row("acc/" + std::string(to_string(kAllPathologies[k])), report.per_label_acc[k]);
  row("acc/avg", report.avg_acc);
  return out.str();
}

}  // namespace claw::metrics
