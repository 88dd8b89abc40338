#include "circus/orchestration/tamer.hpp"

#include <algorithm>
#include <limits>
#include <thread>

#include "circus/error.hpp"

namespace circus::orchestration {

namespace {
constexpr std::size_t kNotWaiting = std::numeric_limits<std::size_t>::max();
}

Tamer::Tamer(std::vector<Monkey*> monkeys, TamerMode mode)
    : monkeys_(std::move(monkeys)),
      mode_(mode),
      waiting_(monkeys_.size(), kNotWaiting),
      arrived_at_(monkeys_.size()),
      done_(monkeys_.size(), false) {
  if (monkeys_.empty()) fail(Errc::invalid_argument, "a tamer needs at least one monkey");
  std::vector<std::string> crates;
  for (auto* m : monkeys_) crates.push_back(m->options().crate);
  std::sort(crates.begin(), crates.end());
  if (std::adjacent_find(crates.begin(), crates.end()) != crates.end()) {
    fail(Errc::invalid_argument, "monkeys must target distinct crates");
  }
}

bool Tamer::arrive(std::size_t index, std::size_t entry, Clock& clock) {
  std::unique_lock lk(mu_);
  if (aborted_) return false;
  waiting_[index] = entry;
  arrived_at_[index] = clock.now();
  const auto gen = generation_;
  auto all_here = [&] {
    for (std::size_t j = 0; j < monkeys_.size(); ++j) {
      if (!done_[j] && waiting_[j] != entry) return false;
    }
    return true;
  };
  if (all_here()) {
    release();
  } else {
    cv_.wait(lk, [&] { return generation_ != gen || aborted_; });
  }
  // Released barriers stay released even if another monkey fails meanwhile.
  const bool released = generation_ != gen;
  const auto release_at = release_at_;
  waiting_[index] = kNotWaiting;
  lk.unlock();
  if (!released) return false;
  clock.advance_to(release_at);
  return true;
}

void Tamer::release() {
  release_at_ = Clock::time_point{};
  for (std::size_t j = 0; j < monkeys_.size(); ++j) {
    if (!done_[j] && waiting_[j] != kNotWaiting) release_at_ = std::max(release_at_, arrived_at_[j]);
  }
  // Cleared here, not on wake-up, so a depart() before the waiters run
  // cannot release them a second time.
  std::fill(waiting_.begin(), waiting_.end(), kNotWaiting);
  ++generation_;
  cv_.notify_all();
}

void Tamer::depart(std::size_t index) {
  std::lock_guard lk(mu_);
  done_[index] = true;
  waiting_[index] = kNotWaiting;
  // The departing monkey may have been the last one a barrier waited for.
  std::optional<std::size_t> entry;
  bool uniform = true;
  for (std::size_t j = 0; j < monkeys_.size(); ++j) {
    if (done_[j]) continue;
    if (!entry) entry = waiting_[j];
    uniform = uniform && waiting_[j] == *entry && waiting_[j] != kNotWaiting;
  }
  if (entry && uniform && !aborted_) release();
  cv_.notify_all();
}

void Tamer::run(const Sink& sink) {
  std::mutex sink_mu;
  std::vector<std::exception_ptr> errors(monkeys_.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < monkeys_.size(); ++i) {
    auto* m = monkeys_[i];
    if (mode_ == TamerMode::synchronous) {
      m->set_before_entry([this, i](std::size_t entry, Clock& clock) { return arrive(i, entry, clock); });
    }
    threads.emplace_back([&, i, m] {
      try {
        m->run([&](const MonkeyEvent& e) {
          std::lock_guard lk(sink_mu);
          if (sink) sink({m->options().crate, e});
        });
      } catch (...) {
        errors[i] = std::current_exception();
        if (mode_ == TamerMode::synchronous) {
          std::lock_guard lk(mu_);
          aborted_ = true;
        }
      }
      depart(i);
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace circus::orchestration
