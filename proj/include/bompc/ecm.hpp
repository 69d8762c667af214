#pragma once

// R-RC equivalent-circuit battery model: series resistance R0 plus one
// R1||C1 polarization pair, all parameters functions of state of charge.
//
// Sign convention: positive current charges the cell and raises the
// terminal voltage, V_T = OCV(z) + U1 + R0(z) * I.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "bompc/spline.hpp"

namespace bompc {

class EcmError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised while reading a parameter table; the message names the offending
/// line and/or column.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw SOC-gridded parameter columns, one entry per knot.
struct CellTable {
  std::vector<double> soc;
  std::vector<double> ocv;  // V
  std::vector<double> r0;   // ohm
  std::vector<double> r1;   // ohm
  std::vector<double> c1;   // F
};

/// Scalar cell constants. Defaults: 2 Ah capacity, 6 A limit, [2.5, 4.2] V.
struct CellConstants {
  double eta = 1.0;         // Coulombic efficiency
  double q = 7200.0;        // capacity, A*s
  double i_max = 6.0;       // A
  double v_t_min = 2.5;     // V
  double v_t_max = 4.2;     // V
};

struct PointParams {
  double ocv;
  double r0;
  double r1;
  double c1;
};

struct EcmState {
  double z = 0.0;   // state of charge
  double u1 = 0.0;  // polarization voltage across C1, V

  friend bool operator==(const EcmState&, const EcmState&) = default;
};

struct StepResult {
  EcmState next;
  double v_t;  // terminal voltage during the step, V
};

class CellParams {
 public:
  /// Builds splines over `table` and checks the physical invariants.
  /// Throws EcmError on violation. Soft findings go to `warnings()`.
  CellParams(CellTable table, CellConstants constants)
      : table_(std::move(table)),
        constants_(constants),
        ocv_(table_.soc, table_.ocv),
        r0_(table_.soc, table_.r0),
        r1_(table_.soc, table_.r1),
        c1_(table_.soc, table_.c1) {
    validate();
  }

  PointParams at(double z) const { return {ocv_(z), r0_(z), r1_(z), c1_(z)}; }

  /// d/dz of each parameter curve.
  PointParams slope_at(double z) const {
    return {ocv_.derivative(z), r0_.derivative(z), r1_.derivative(z), c1_.derivative(z)};
  }

  const CellTable& table() const { return table_; }
  const CellConstants& constants() const { return constants_; }
  const Spline& ocv() const { return ocv_; }
  const Spline& r0() const { return r0_; }
  const Spline& r1() const { return r1_; }
  const Spline& c1() const { return c1_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Copy with the R1 curve replaced; the table column is left as loaded.
  CellParams with_r1(Spline r1) const {
    CellParams p = *this;
    p.r1_ = std::move(r1);
    p.warnings_.clear();
    p.validate();
    return p;
  }

  /// SOC where OCV first reaches `v`, or 1 if it stays below on [0, 1].
  /// Bisection on a 1000-point bracket scan.
  double soc_at_ocv(double v) const {
    constexpr int kScan = 1000;
    double prev = 0.0;
    if (ocv_(0.0) >= v) return 0.0;
    for (int i = 1; i <= kScan; ++i) {
      const double z = static_cast<double>(i) / kScan;
      if (ocv_(z) >= v) {
        double lo = prev, hi = z;
        for (int it = 0; it < 80; ++it) {
          const double mid = 0.5 * (lo + hi);
          (ocv_(mid) >= v ? hi : lo) = mid;
        }
        return 0.5 * (lo + hi);
      }
      prev = z;
    }
    return 1.0;
  }

 private:
  void validate() {
    const auto& c = constants_;
    if (!(c.eta > 0.0 && c.eta <= 1.0)) throw EcmError("cell: eta must lie in (0, 1]");
    if (!(c.q > 0.0)) throw EcmError("cell: capacity q must be positive");
    if (!(c.i_max > 0.0)) throw EcmError("cell: i_max must be positive");
    if (!(c.v_t_min < c.v_t_max)) throw EcmError("cell: v_t_min must be below v_t_max");

    constexpr int kScan = 1000;
    double prev_ocv = ocv_(0.0);
    bool monotone = true;
    for (int i = 0; i <= kScan; ++i) {
      const double z = static_cast<double>(i) / kScan;
      const PointParams p = at(z);
      if (!(p.r0 > 0.0)) throw EcmError("cell: r0 not positive at soc " + std::to_string(z));
      if (!(p.r1 > 0.0)) throw EcmError("cell: r1 not positive at soc " + std::to_string(z));
      if (!(p.c1 > 0.0)) throw EcmError("cell: c1 not positive at soc " + std::to_string(z));
      if (i > 0 && p.ocv < prev_ocv) monotone = false;
      prev_ocv = p.ocv;
    }
    const double ocv0 = ocv_(0.0);
    if (!(ocv0 > c.v_t_min && ocv0 < c.v_t_max)) {
      throw EcmError("cell: ocv(0) must lie strictly inside [v_t_min, v_t_max]");
    }
    if (!(ocv_(1.0) <= c.v_t_max)) throw EcmError("cell: ocv(1) exceeds v_t_max");
    if (!monotone) warnings_.emplace_back("cell: interpolated ocv is not monotone on [0, 1]");
  }

  CellTable table_;
  CellConstants constants_;
  Spline ocv_;
  Spline r0_;
  Spline r1_;
  Spline c1_;
  std::vector<std::string> warnings_;
};

/// Point parameters at `z` (clamped to the table range by the splines).
inline PointParams params_at(const CellParams& cell, double z) { return cell.at(z); }

/// One explicit step of the discrete dynamics, parameters frozen at the
/// pre-step SOC:
///   z'  = z + eta*ts/q * I
///   u1' = (u1 - r1*I) * exp(-ts/(r1*c1)) + r1*I
///   V_T = ocv(z) + u1 + r0*I
inline StepResult step(const CellParams& cell, const EcmState& state, double current, double ts) {
  if (!std::isfinite(state.z) || !std::isfinite(state.u1) || !std::isfinite(current) || !std::isfinite(ts)) {
    throw EcmError("step: non-finite input");
  }
  if (!(ts > 0.0)) throw EcmError("step: sampling time must be positive");
  const PointParams p = cell.at(state.z);
  const auto& k = cell.constants();
  const double decay = std::exp(-ts / (p.r1 * p.c1));
  StepResult out;
  out.next.z = state.z + (k.eta * ts / k.q) * current;
  out.next.u1 = (state.u1 - p.r1 * current) * decay + p.r1 * current;
  out.v_t = p.ocv + state.u1 + p.r0 * current;
  return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Locale-independent strict parse of a finite double.
inline bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

}  // namespace detail

inline constexpr std::string_view kCellTableHeader = "soc,ocv_v,r0_ohm,r1_ohm,c1_f";

/// Parses the cell parameter CSV (header `soc,ocv_v,r0_ohm,r1_ohm,c1_f`,
/// `#` comment lines ignored) into columns. Line numbers in errors are
/// 1-based file lines.
inline CellTable parse_cell_table(std::istream& in, const std::string& source = "<stream>") {
  static constexpr std::string_view kColumns[] = {"soc", "ocv_v", "r0_ohm", "r1_ohm", "c1_f"};
  CellTable t;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    auto view = detail::trim(line);
    if (lineno == 1 && view.substr(0, 3) == "\xEF\xBB\xBF") view = view.substr(3);
    if (view.empty() || view.front() == '#') continue;
    const auto fields = detail::split(view, ',');
    if (!have_header) {
      if (view != kCellTableHeader) {
        for (std::size_t c = 0; c < std::size(kColumns); ++c) {
          if (c >= fields.size() || fields[c] != kColumns[c]) {
            throw IngestionError(source + ": line " + std::to_string(lineno) + ": missing or misplaced column '" +
                                 std::string(kColumns[c]) + "' in header");
          }
        }
        throw IngestionError(source + ": line " + std::to_string(lineno) + ": unexpected extra header columns");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != std::size(kColumns)) {
      throw IngestionError(source + ": line " + std::to_string(lineno) + ": expected 5 fields, got " +
                           std::to_string(fields.size()));
    }
    double v[5];
    for (std::size_t c = 0; c < 5; ++c) {
      if (!detail::parse_double(fields[c], v[c])) {
        throw IngestionError(source + ": line " + std::to_string(lineno) + ", column '" + std::string(kColumns[c]) +
                             "': not a finite number");
      }
    }
    if (!t.soc.empty() && !(v[0] > t.soc.back())) {
      throw IngestionError(source + ": line " + std::to_string(lineno) + ", column 'soc': not strictly increasing");
    }
    for (std::size_t c = 2; c < 5; ++c) {
      if (!(v[c] > 0.0)) {
        throw IngestionError(source + ": line " + std::to_string(lineno) + ", column '" + std::string(kColumns[c]) +
                             "': must be positive");
      }
    }
    t.soc.push_back(v[0]);
    t.ocv.push_back(v[1]);
    t.r0.push_back(v[2]);
    t.r1.push_back(v[3]);
    t.c1.push_back(v[4]);
  }
  if (!have_header) throw IngestionError(source + ": missing header row '" + std::string(kCellTableHeader) + "'");
  if (t.soc.size() < 2) throw IngestionError(source + ": at least two data rows are required");
  if (t.soc.front() > 0.0 || t.soc.back() < 1.0) {
    throw IngestionError(source + ": column 'soc' must cover [0, 1]");
  }
  return t;
}

/// Reads and validates a cell parameter table file.
inline CellParams load_parameter_table(const std::string& path, const CellConstants& constants = {}) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path + ": cannot open file");
  CellTable table = parse_cell_table(in, path);
  try {
    return CellParams(std::move(table), constants);
  } catch (const std::invalid_argument& e) {
    throw IngestionError(path + ": " + e.what());
  }
}

}  // namespace bompc
