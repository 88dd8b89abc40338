#pragma once

#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "circus/orchestration/monkey.hpp"

namespace circus::orchestration {

enum class TamerMode { synchronous, independent };

struct TamerEvent {
  std::string crate;
  MonkeyEvent event;
};

/// Runs several monkeys, one thread each, on disjoint crates. In synchronous
/// mode no monkey starts entry k+1 before every monkey has finished entry k;
/// at each barrier the simulated clocks are brought to the latest arrival.
class Tamer {
 public:
  using Sink = std::function<void(const TamerEvent&)>;

  /// In synchronous mode the monkeys' before_entry hooks are replaced.
  Tamer(std::vector<Monkey*> monkeys, TamerMode mode);

  /// Blocks until every monkey is finished or stopped. The sink is called
  /// from the monkey threads, serialized. Rethrows the first member error
  /// after all threads have ended; in synchronous mode a failure releases
  /// the others at their next barrier as stopped.
  void run(const Sink& sink);

 private:
  bool arrive(std::size_t index, std::size_t entry, Clock& clock);
  void depart(std::size_t index);
  /// Opens the current barrier; caller holds mu_.
  void release();

  std::vector<Monkey*> monkeys_;
  TamerMode mode_;
  std::mutex mu_;
  std::condition_variable cv_;
  /// Entry each monkey is waiting to start, or SIZE_MAX when not waiting.
  std::vector<std::size_t> waiting_;
  std::vector<Clock::time_point> arrived_at_;
  std::vector<bool> done_;
  std::size_t generation_ = 0;
  Clock::time_point release_at_{};
  bool aborted_ = false;
};

}  // namespace circus::orchestration
