#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace patchlink::acceptance {

// What a criterion found. `detail` goes on the PASS/FAIL line.
struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> failures;  // first few mismatches, printed below the line

  void fail(const std::string& what) {
    pass = false;
    if (failures.size() < 10) failures.push_back(what);
  }
  void expect(bool ok, const std::string& what) {
    if (!ok) fail(what);
  }
};

struct Criterion {
  std::string id;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::vector<Criterion>& registry();

struct Register {
  Register(std::string id, std::string title, double budget, std::function<Outcome()> run) {
    registry().push_back({std::move(id), std::move(title), budget, std::move(run)});
  }
};

template <typename... Ts>
std::string cat(const Ts&... parts) {
  std::ostringstream s;
  (s << ... << parts);
  return s.str();
}

}  // namespace patchlink::acceptance
