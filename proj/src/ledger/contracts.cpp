#include "eve/error.hpp"
#include "eve/ledger.hpp"

#include <cstdio>

namespace eve::ledger {

namespace {

std::string window_tag(int window) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", window);
  return buf;
}

Transaction make_tx(const Ledger& l, Contract c, std::string op, const Identity& who,
                    std::string type, std::string key, int window, int round, json value) {
  Transaction tx;
  tx.channel = l.channel();
  tx.contract = c;
  tx.op = std::move(op);
  tx.submitter = who.id;
  tx.type = std::move(type);
  tx.key = std::move(key);
  tx.window = window;
  tx.round = round;
  tx.value = std::move(value);
  return tx;
}

}  // namespace

void WindowClock::set(int window, Stage stage) {
  std::lock_guard lk(mu_);
  stages_[window] = stage;
}

Stage WindowClock::stage(int window) const {
  std::lock_guard lk(mu_);
  auto it = stages_.find(window);
  return it == stages_.end() ? Stage::Closed : it->second;
}

std::uint64_t act_init(Ledger& global, const Identity& who, const std::string& account,
                       const json& attributes) {
  auto tx = make_tx(global, Contract::ACT, "init", who, "account", "account/" + account, -1, -1,
                    attributes);
  return global.append(tx, who);
}

std::uint64_t bc_submit_bid(Ledger& local, const WindowClock& clock, int window,
                            const Identity& who, const json& bid) {
  if (clock.stage(window) != Stage::OpenBidding)
    throw Error(ErrorCode::WindowClosed, "bidding closed for window " + std::to_string(window));
  // The key is derived from the caller, so a later bid replaces the earlier one.
  auto tx = make_tx(local, Contract::BC, "submit_bid", who, "bid",
                    "bid/" + window_tag(window) + "/" + who.id, window, -1, bid);
  return local.append(tx, who);
}

std::vector<Record> bc_last_bids(const Ledger& local, int window, const Identity& who) {
  Selector sel;
  sel.type = "bid";
  sel.key_prefix = "bid/" + window_tag(window) + "/";
  return local.select(sel, who);
}

std::uint64_t bc_put_dispatch(Ledger& local, const Identity& who, int window,
                              const std::string& prosumer, const json& value) {
  auto tx = make_tx(local, Contract::BC, "dispatch", who, "dispatch",
                    "dispatch/" + window_tag(window) + "/" + prosumer, window, -1, value);
  return append_with_retry(local, tx, who);
}

std::uint64_t rc_put_round(Ledger& global, const Identity& who, const std::string& type,
                           int window, int round, const std::string& key, const json& value,
                           std::vector<int> readers) {
  auto tx = make_tx(global, Contract::RC, "put_round", who, type, key, window, round, value);
  tx.readers = std::move(readers);
  return append_with_retry(global, tx, who);
}

std::uint64_t mc_submit_measurements(Ledger& local, const WindowClock& clock, const Identity& who,
                                     int window, int interval, const json& values) {
  Stage s = clock.stage(window);
  if (s != Stage::Delivery && s != Stage::Closed)
    throw Error(ErrorCode::WindowClosed,
                "window " + std::to_string(window) + " has not started delivery");
  std::string slot = interval < 0 ? "all" : std::to_string(interval);
  auto tx = make_tx(local, Contract::MC, "submit", who, "measurement",
                    "meas/" + window_tag(window) + "/" + slot + "/" + who.id, window, interval,
                    values);
  return local.append(tx, who);
}

std::uint64_t append_with_retry(Ledger& ledger, const Transaction& tx, const Identity& who,
                                int attempts) {
  for (int i = 1;; ++i) {
    try {
      return ledger.append(tx, who);
    } catch (const Error& e) {
      // Policy failures are permanent; only transient I/O is retried.
      if (e.code() != ErrorCode::IoFailure || i >= attempts) throw;
    }
  }
}

}  // namespace eve::ledger
