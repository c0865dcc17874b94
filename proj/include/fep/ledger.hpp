#pragma once

#include <map>
#include <vector>

#include "fep/common.hpp"

namespace fep {

// Which additional sources each student has paid for, and when. A
// (student, source) pair is recorded once; later uses are free.
class AcquisitionLedger {
 public:
  struct Entry {
    SourceTag source;
    int acquired_at = 0;  // checkpoint index

    bool operator==(const Entry&) const = default;
  };

  // Returns true when the pair is new; re-acquiring leaves the ledger unchanged.
  bool acquire(const StudentId& student, SourceTag source, int checkpoint_index) {
    auto& list = entries_[student];
    for (const auto& e : list)
      if (e.source == source) return false;
    list.push_back({source, checkpoint_index});
    return true;
  }

  bool holds(const StudentId& student, SourceTag source) const {
    auto it = entries_.find(student);
    if (it == entries_.end()) return false;
    for (const auto& e : it->second)
      if (e.source == source) return true;
    return false;
  }

  bool holds_any(const StudentId& student) const {
    auto it = entries_.find(student);
    return it != entries_.end() && !it->second.empty();
  }

  std::size_t count_for(const StudentId& student) const {
    auto it = entries_.find(student);
    return it == entries_.end() ? 0 : it->second.size();
  }

  const std::vector<Entry>& entries_for(const StudentId& student) const {
    static const std::vector<Entry> none;
    auto it = entries_.find(student);
    return it == entries_.end() ? none : it->second;
  }

  std::size_t students() const { return entries_.size(); }

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& [id, list] : entries_) n += list.size();
    return n;
  }

  const std::map<StudentId, std::vector<Entry>>& entries() const { return entries_; }

  bool operator==(const AcquisitionLedger&) const = default;

 private:
  std::map<StudentId, std::vector<Entry>> entries_;
};

}  // namespace fep
