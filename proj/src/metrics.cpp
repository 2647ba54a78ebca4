#include "milkit/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "milkit/io_util.hpp"

namespace milkit {

ConfusionMatrix::ConfusionMatrix(int n_classes) : c_(n_classes) {
  if (n_classes < 1) throw ConfigError("confusion matrix: need at least one class");
  counts_.assign(static_cast<std::size_t>(c_) * c_, 0);
}

void ConfusionMatrix::add(int true_class, int predicted_class, long count) {
  if (true_class < 0 || true_class >= c_ || predicted_class < 0 || predicted_class >= c_)
    throw InputError("confusion matrix: class index out of range");
  if (count < 0) throw InputError("confusion matrix: negative count");
  counts_[static_cast<std::size_t>(true_class) * c_ + predicted_class] += count;
}

long ConfusionMatrix::total() const {
  long t = 0;
  for (long v : counts_) t += v;
  return t;
}

long ConfusionMatrix::row_sum(int t) const {
  long s = 0;
  for (int p = 0; p < c_; ++p) s += at(t, p);
  return s;
}

long ConfusionMatrix::col_sum(int p) const {
  long s = 0;
  for (int t = 0; t < c_; ++t) s += at(t, p);
  return s;
}

std::optional<double> sensitivity(const ConfusionMatrix& cm, int c) {
  const long rs = cm.row_sum(c);
  if (rs == 0) return std::nullopt;
  return static_cast<double>(cm.at(c, c)) / static_cast<double>(rs);
}

std::optional<double> f1(const ConfusionMatrix& cm, int c) {
  const long rs = cm.row_sum(c);
  if (rs == 0) return std::nullopt;
  const long cs = cm.col_sum(c);
  const double recall = static_cast<double>(cm.at(c, c)) / static_cast<double>(rs);
  const double precision = cs == 0 ? 0.0 : static_cast<double>(cm.at(c, c)) / static_cast<double>(cs);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double weighted_accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InputError("weighted_accuracy: no cases");
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < cm.n_classes(); ++c)
    if (auto s = sensitivity(cm, c)) {
      sum += *s;
      ++n;
    }
  return sum / n;
}

double micro_accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total == 0) throw InputError("micro_accuracy: no cases");
  long correct = 0;
  for (int c = 0; c < cm.n_classes(); ++c) correct += cm.at(c, c);
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::string format_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  if (cm.total() == 0) throw InputError("report: no cases");
  if (static_cast<int>(class_names.size()) != cm.n_classes())
    throw InputError("report: class name count mismatch");
  std::ostringstream out;
  out << "class,support,sensitivity,f1\n";
  char buf[64];
  bool excluded = false;
  for (int c = 0; c < cm.n_classes(); ++c) {
    out << class_names[c] << "," << cm.row_sum(c) << ",";
    auto sen = sensitivity(cm, c);
    auto f = f1(cm, c);
    if (sen) {
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f", *sen, *f);
      out << buf << "\n";
    } else {
      excluded = true;
      out << "absent,absent\n";
    }
  }
  std::snprintf(buf, sizeof(buf), "%.6f", weighted_accuracy(cm));
  out << "weighted_accuracy,,," << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", micro_accuracy(cm));
  out << "micro_accuracy,,," << buf << "\n";
  if (excluded) out << "# note: zero-support classes excluded from weighted accuracy\n";
  return out.str();
}

void emit_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                 const std::filesystem::path& csv_path) {
  io::write_file(csv_path, format_report(cm, class_names));
}

void write_activation_svg(const std::filesystem::path& path, const std::vector<double>& scores,
                          const std::vector<char>& kept, double threshold) {
  if (scores.empty()) throw InputError("activation chart: no scores");
  if (kept.size() != scores.size()) throw InputError("activation chart: kept mask length mismatch");
  const int w = 640, h = 360, ml = 50, mr = 20, mt = 20, mb = 40;
  const int pw = w - ml - mr, ph = h - mt - mb;
  const int n = static_cast<int>(scores.size());
  auto px = [&](int i) { return n == 1 ? ml + pw / 2.0 : ml + pw * static_cast<double>(i) / (n - 1); };
  auto py = [&](double s) { return mt + ph * (1.0 - std::min(std::max(s, 0.0), 1.0)); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << py(threshold) << "\" x2=\"" << ml + pw << "\" y2=\""
      << py(threshold) << "\" stroke=\"#888888\" stroke-dasharray=\"6 4\"/>\n";
  if (n > 1) {
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (int i = 0; i < n; ++i) svg << px(i) << "," << py(scores[i]) << " ";
    svg << "\"/>\n";
  }
  for (int i = 0; i < n; ++i)
    svg << "<circle cx=\"" << px(i) << "\" cy=\"" << py(scores[i]) << "\" r=\""
        << (kept[i] ? 5 : 3) << "\" fill=\"" << (kept[i] ? "#d62728" : "#1f77b4") << "\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"" << h - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">instance index (kept instances in red)</text>\n";
  svg << "</svg>\n";
  io::write_file(path, svg.str());
}

}  // namespace milkit
