#include "gaia/notifier.hpp"

#include <algorithm>
#include <cstdio>

#include <spdlog/spdlog.h>

#include "gaia/error.hpp"
#include "gaia/numeric.hpp"
#include "gaia/series_store.hpp"
#include "gaia/text_template.hpp"

namespace gaia::notify {

using nlohmann::json;

json to_json(const Notification& n) {
  return json{{"id", n.id},
              {"rule_id", n.rule_id},
              {"resource", n.resource_path},
              {"category", rules::to_string(n.category)},
              {"suggestion", n.suggestion},
              {"event_description", n.event_description},
              {"emitted_at", format_instant(n.emitted_at)}};
}

Notification notification_from_json(const json& j) {
  Notification n;
  n.id = j.at("id").get<std::string>();
  n.rule_id = j.at("rule_id").get<std::string>();
  n.resource_path = j.at("resource").get<std::string>();
  auto category = rules::parse_category(j.at("category").get<std::string>());
  if (!category) throw Error(Errc::validation_failed, "bad notification category");
  n.category = *category;
  n.suggestion = j.at("suggestion").get<std::string>();
  n.event_description = j.at("event_description").get<std::string>();
  n.emitted_at = parse_instant(j.at("emitted_at").get<std::string>());
  return n;
}

Notification compose_notification(const rules::TriggerEvent& ev, const rules::Rule& rule) {
  std::map<std::string, std::string, std::less<>> values{{"resource", rule.target}};
  if (!ev.bindings.empty()) {
    values["metric"] = std::string(to_string(ev.bindings.front().metric.kind));
    values["value"] = format_number(ev.bindings.front().value);
  }

  Notification n;
  n.rule_id = rule.id;
  n.resource_path = ev.target;
  n.category = rule.category;
  n.suggestion = render_template(rule.suggestion_template, values);

  std::string desc = rule.name + " on " + ev.target + " at " + format_instant(ev.fired_at);
  if (!ev.bindings.empty()) {
    desc += ": ";
    for (std::size_t i = 0; i < ev.bindings.size(); ++i) {
      const auto& b = ev.bindings[i];
      if (i > 0) desc += ", ";
      desc += rules::to_string(b.metric) + "=" + format_number(b.value) + " (" +
              format_instant(b.timestamp) + ")";
    }
  }
  n.event_description = std::move(desc);
  return n;
}

bool SubscriptionFilter::matches(const Notification& n) const {
  if (!model::path_covers(scope, n.resource_path)) return false;
  return !categories || categories->contains(n.category);
}

Subscription::Subscription(std::string client, SubscriptionFilter filter, std::size_t capacity)
    : client_(std::move(client)), filter_(std::move(filter)), capacity_(capacity) {}

std::optional<Notification> Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  ready_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  Notification n = std::move(queue_.front());
  queue_.pop_front();
  return n;
}

std::optional<Notification> Subscription::try_next() {
  std::lock_guard lock(mutex_);
  if (queue_.empty()) return std::nullopt;
  Notification n = std::move(queue_.front());
  queue_.pop_front();
  return n;
}

bool Subscription::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

void Subscription::set_listener(std::function<void()> listener) {
  std::lock_guard lock(mutex_);
  listener_ = std::move(listener);
}

bool Subscription::offer(const Notification& n) {
  std::function<void()> listener;
  {
    std::lock_guard lock(mutex_);
    if (closed_ || queue_.size() >= capacity_) return false;
    queue_.push_back(n);
    listener = listener_;
  }
  ready_.notify_all();
  if (listener) listener();
  return true;
}

void Subscription::close() {
  std::function<void()> listener;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    closed_ = true;
    listener = listener_;
  }
  ready_.notify_all();
  if (listener) listener();
}

Notifier::Notifier(const model::TreeRegistry& tree, store::DocStore* log, Clock clock,
                   NotifierConfig config)
    : tree_(tree), docs_(log), clock_(std::move(clock)), config_(config) {
  if (docs_) {
    for (const auto& [id, doc] : docs_->list("notifications")) {
      log_.push_back(notification_from_json(doc));
    }
    next_id_ = log_.size() + 1;
  }
}

std::shared_ptr<Subscription> Notifier::subscribe(
    std::string client, std::string scope,
    std::optional<std::set<rules::Category>> categories) {
  if (!scope.empty()) {
    const auto tree = tree_.snapshot();
    const auto* node = tree->try_resolve(scope);
    if (!node) throw Error(Errc::unknown_scope, "unknown scope '" + scope + "'");
    scope = tree->canonical_path(*node);
  }
  auto sub = std::make_shared<Subscription>(
      std::move(client), SubscriptionFilter{std::move(scope), std::move(categories)},
      config_.queue_capacity);
  std::lock_guard lock(mutex_);
  subscribers_.push_back(sub);
  return sub;
}

void Notifier::unsubscribe(const std::shared_ptr<Subscription>& sub) {
  {
    std::lock_guard lock(mutex_);
    std::erase(subscribers_, sub);
  }
  sub->close();
}

std::size_t Notifier::subscriber_count() const {
  std::lock_guard lock(mutex_);
  return subscribers_.size();
}

Notification Notifier::notify(const rules::TriggerEvent& ev, const rules::Rule& rule) {
  Notification n = compose_notification(ev, rule);
  // Id assignment, timestamping and fan-out happen as one step so ids and
  // emitted_at follow log order.
  std::lock_guard order(order_mutex_);
  std::uint64_t number = 0;
  {
    std::lock_guard lock(mutex_);
    number = next_id_;
  }
  char id[32];
  std::snprintf(id, sizeof id, "n-%08llu", static_cast<unsigned long long>(number));
  n.id = id;
  n.emitted_at = clock_();
  publish(n);
  return n;
}

std::size_t Notifier::publish(const Notification& n) {
  if (n.suggestion.empty() || n.event_description.empty() || n.id.empty()) {
    throw Error(Errc::validation_failed, "notification is missing its id, suggestion or description");
  }
  std::vector<std::shared_ptr<Subscription>> dropped;
  std::size_t delivered = 0;
  {
    std::lock_guard lock(mutex_);
    if (docs_) docs_->put("notifications", n.id, to_json(n));
    log_.push_back(n);
    next_id_ = std::max<std::uint64_t>(next_id_, log_.size() + 1);
    for (const auto& sub : subscribers_) {
      if (!sub->filter().matches(n)) continue;
      if (sub->offer(n)) {
        ++delivered;
      } else {
        dropped.push_back(sub);
      }
    }
    for (const auto& sub : dropped) std::erase(subscribers_, sub);
  }
  for (const auto& sub : dropped) {
    spdlog::warn("dropping subscriber {}: send queue full or closed", sub->client());
    sub->close();
  }
  return delivered;
}

std::vector<Notification> Notifier::log(const std::string& scope, std::optional<Instant> since,
                                        std::size_t limit) const {
  std::vector<Notification> out;
  std::lock_guard lock(mutex_);
  for (const auto& n : log_) {
    if (!model::path_covers(scope, n.resource_path)) continue;
    if (since && n.emitted_at < *since) continue;
    out.push_back(n);
    if (limit > 0 && out.size() == limit) break;
  }
  return out;
}

std::size_t Notifier::log_size() const {
  std::lock_guard lock(mutex_);
  return log_.size();
}

void Notifier::close_all() {
  std::vector<std::shared_ptr<Subscription>> subs;
  {
    std::lock_guard lock(mutex_);
    subs.swap(subscribers_);
  }
  for (const auto& s : subs) s->close();
}

}  // namespace gaia::notify
