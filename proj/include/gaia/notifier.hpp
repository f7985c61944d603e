#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaia/model.hpp"
#include "gaia/rule_engine.hpp"
#include "gaia/time.hpp"

namespace gaia::store {
class DocStore;
}

namespace gaia::notify {

struct Notification {
  std::string id;
  std::string rule_id;
  std::string resource_path;
  rules::Category category = rules::Category::behavioral;
  std::string suggestion;
  std::string event_description;
  Instant emitted_at;

  friend bool operator==(const Notification&, const Notification&) = default;
};

// Wire form: {id, rule_id, resource, category, suggestion, event_description,
// emitted_at}.
nlohmann::json to_json(const Notification& n);
Notification notification_from_json(const nlohmann::json& j);

// Pure rendering of the message body; id and emitted_at are left empty.
// Throws Error{template_error} for an unbound placeholder.
Notification compose_notification(const rules::TriggerEvent& ev, const rules::Rule& rule);

struct SubscriptionFilter {
  std::string scope;
  std::optional<std::set<rules::Category>> categories;

  bool matches(const Notification& n) const;
};

// One live subscriber: a bounded FIFO filled by the notifier and drained by
// the client (a test, a WebSocket session).
class Subscription {
 public:
  Subscription(std::string client, SubscriptionFilter filter, std::size_t capacity);

  const std::string& client() const { return client_; }
  const SubscriptionFilter& filter() const { return filter_; }

  std::optional<Notification> next(std::chrono::milliseconds timeout);
  std::optional<Notification> try_next();
  bool closed() const;

  // Called after each enqueue and on close, from the publishing thread.
  void set_listener(std::function<void()> listener);

 private:
  friend class Notifier;
  bool offer(const Notification& n);
  void close();

  std::string client_;
  SubscriptionFilter filter_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<Notification> queue_;
  bool closed_ = false;
  std::function<void()> listener_;
};

struct NotifierConfig {
  std::size_t queue_capacity = 256;
};

class Notifier {
 public:
  Notifier(const model::TreeRegistry& tree, store::DocStore* log, Clock clock,
           NotifierConfig config = {});

  // Throws Error{unknown_scope} when `scope` does not name a node.
  std::shared_ptr<Subscription> subscribe(std::string client, std::string scope,
                                          std::optional<std::set<rules::Category>> categories = {});
  void unsubscribe(const std::shared_ptr<Subscription>& sub);
  std::size_t subscriber_count() const;

  // Assigns id and emitted_at, then publishes.
  Notification notify(const rules::TriggerEvent& ev, const rules::Rule& rule);

  // Logs, then enqueues to every matching live subscriber. A subscriber whose
  // queue is full is disconnected. Returns the number of deliveries.
  std::size_t publish(const Notification& n);

  // Entries with emitted_at >= since inside `scope`, oldest first.
  std::vector<Notification> log(const std::string& scope = {},
                                std::optional<Instant> since = {},
                                std::size_t limit = 0) const;
  std::size_t log_size() const;

  // Closes every live subscription.
  void close_all();

 private:
  const model::TreeRegistry& tree_;
  store::DocStore* docs_;
  Clock clock_;
  NotifierConfig config_;

  std::mutex order_mutex_;
  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<Subscription>> subscribers_;
  std::vector<Notification> log_;
  std::uint64_t next_id_ = 1;
};

}  // namespace gaia::notify
