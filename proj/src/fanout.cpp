#include "llmgate/fanout.hpp"

#include <algorithm>
#include <atomic>
#include <set>

#include "llmgate/error.hpp"

namespace llmgate {

// ---------------------------------------------------------------------------
// EventFeed

EventFeed::EventFeed(std::string fanout_id, std::size_t capacity)
    : fanout_id_(std::move(fanout_id)), capacity_(std::max<std::size_t>(capacity, 1)) {}

std::uint64_t EventFeed::min_cursor_locked() const {
  std::uint64_t m = next_seq_;
  for (const auto& [_, c] : cursors_) m = std::min(m, c);
  return m;
}

void EventFeed::trim_locked() {
  const auto floor = min_cursor_locked();
  while (!buffer_.empty() && base_ < floor) {
    buffer_.pop_front();
    ++base_;
  }
  if (buffer_.empty()) base_ = next_seq_;
}

void EventFeed::push_locked(FanoutEvent ev, std::unique_lock<std::mutex>& lock) {
  not_full_.wait(lock, [&] { return closed_ || cursors_.empty() || next_seq_ - min_cursor_locked() < capacity_; });
  ev.fanout_id = fanout_id_;
  ev.merge_seq = next_seq_++;
  buffer_.push_back(std::move(ev));
  trim_locked();
  not_empty_.notify_all();
}

void EventFeed::publish(const TokenEvent& event) {
  std::unique_lock lock(mutex_);
  FanoutEvent ev;
  ev.kind = FanoutEvent::Kind::token;
  ev.inner = event;
  push_locked(std::move(ev), lock);
}

void EventFeed::publish_complete() {
  std::unique_lock lock(mutex_);
  FanoutEvent ev;
  ev.kind = FanoutEvent::Kind::complete;
  push_locked(std::move(ev), lock);
  complete_ = true;
  not_empty_.notify_all();
}

std::uint64_t EventFeed::subscribe() {
  std::lock_guard lock(mutex_);
  const auto id = next_subscriber_++;
  cursors_.emplace(id, next_seq_);
  return id;
}

void EventFeed::unsubscribe(std::uint64_t subscriber) {
  std::lock_guard lock(mutex_);
  cursors_.erase(subscriber);
  trim_locked();
  not_full_.notify_all();
}

std::optional<FanoutEvent> EventFeed::next(std::uint64_t subscriber) {
  return next_for(subscriber, std::chrono::milliseconds::max());
}

std::optional<FanoutEvent> EventFeed::next_for(std::uint64_t subscriber, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  auto it = cursors_.find(subscriber);
  if (it == cursors_.end()) return std::nullopt;
  const auto ready = [&] { return it->second < next_seq_ || complete_ || closed_; };
  if (timeout == std::chrono::milliseconds::max()) {
    not_empty_.wait(lock, ready);
  } else if (!not_empty_.wait_for(lock, timeout, ready)) {
    return std::nullopt;
  }
  if (it->second >= next_seq_) return std::nullopt;
  FanoutEvent ev = buffer_[it->second - base_];
  ++it->second;
  trim_locked();
  not_full_.notify_all();
  return ev;
}

void EventFeed::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  not_full_.notify_all();
  not_empty_.notify_all();
}

bool EventFeed::complete() const {
  std::lock_guard lock(mutex_);
  return complete_;
}

// ---------------------------------------------------------------------------
// FanoutStream

FanoutStream::FanoutStream(std::shared_ptr<EventFeed> feed, std::string fanout_id, std::vector<ModelId> models)
    : feed_(std::move(feed)), fanout_id_(std::move(fanout_id)), models_(std::move(models)) {
  subscriber_ = feed_->subscribe();
}

FanoutStream::FanoutStream(FanoutStream&& other) noexcept
    : feed_(std::move(other.feed_)),
      subscriber_(other.subscriber_),
      fanout_id_(std::move(other.fanout_id_)),
      models_(std::move(other.models_)) {
  other.feed_.reset();
}

FanoutStream& FanoutStream::operator=(FanoutStream&& other) noexcept {
  if (this != &other) {
    if (feed_) feed_->unsubscribe(subscriber_);
    feed_ = std::move(other.feed_);
    subscriber_ = other.subscriber_;
    fanout_id_ = std::move(other.fanout_id_);
    models_ = std::move(other.models_);
    other.feed_.reset();
  }
  return *this;
}

FanoutStream::~FanoutStream() {
  if (feed_) feed_->unsubscribe(subscriber_);
}

std::optional<FanoutEvent> FanoutStream::next() {
  if (!feed_) return std::nullopt;
  return feed_->next(subscriber_);
}

std::optional<FanoutEvent> FanoutStream::next_for(std::chrono::milliseconds timeout) {
  if (!feed_) return std::nullopt;
  return feed_->next_for(subscriber_, timeout);
}

std::vector<FanoutEvent> FanoutStream::collect() {
  std::vector<FanoutEvent> out;
  while (auto ev = next()) {
    out.push_back(std::move(*ev));
    if (out.back().is_complete()) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// FanoutOrchestrator

struct FanoutOrchestrator::Run {
  std::string id;
  std::shared_ptr<EventFeed> feed;
  std::vector<ModelId> models;
  std::atomic<std::size_t> remaining{0};
  // Last, so producers are joined before the members they use go away.
  std::vector<std::jthread> producers;
};

Conversation with_context(const Conversation& conversation, const PackedContext& context) {
  if (context.entries.empty()) return conversation;
  std::string block(kContextPreamble);
  for (const auto& e : context.entries) {
    block += "[" + e.chunk_id + "]\n" + e.text;
    if (!block.ends_with('\n')) block.push_back('\n');
    block.push_back('\n');
  }
  Conversation out = conversation;
  if (!out.messages.empty() && out.messages.front().role == Role::system) {
    out.messages.front().content = block + out.messages.front().content;
  } else {
    while (block.ends_with('\n')) block.pop_back();
    out.messages.insert(out.messages.begin(), ChatMessage{Role::system, std::move(block)});
  }
  return out;
}

FanoutOrchestrator::FanoutOrchestrator(const ModelRegistry& registry, FanoutOptions options,
                                       std::shared_ptr<IdSource> ids)
    : registry_(registry), options_(std::move(options)), ids_(std::move(ids)) {
  if (!options_.backend) options_.backend = chat_completion;
  if (!ids_) ids_ = std::make_shared<IdSource>();
}

FanoutOrchestrator::~FanoutOrchestrator() { shutdown(); }

FanoutStream FanoutOrchestrator::fanout(FanoutRequest request) {
  if (request.model_ids.empty()) {
    throw Error(ErrorCode::invalid_request, "fanout requires at least one model");
  }
  if (request.model_ids.size() > options_.max_width) {
    throw Error(ErrorCode::invalid_request, "fanout width " + std::to_string(request.model_ids.size()) +
                                                " exceeds the maximum of " + std::to_string(options_.max_width));
  }
  std::set<ModelId> seen;
  for (const auto& id : request.model_ids) {
    if (!seen.insert(id).second) throw Error(ErrorCode::invalid_request, "duplicate model '" + id.value + "'");
  }
  request.params.validate();

  const Conversation conversation =
      request.context ? with_context(request.conversation, *request.context) : request.conversation;
  conversation.validate();

  struct Job {
    ResolvedModel model;
    Prompt prompt;
    GenerationParams params;
    std::optional<std::string> overflow;
  };
  std::vector<Job> jobs;
  for (const auto& id : request.model_ids) {
    Job job{registry_.resolve(id), {}, request.params, std::nullopt};
    job.prompt = registry_.render_prompt(id, conversation);
    for (const auto& s : job.model.prompt_template.stop_sequences) {
      if (std::find(job.params.stop.begin(), job.params.stop.end(), s) == job.params.stop.end()) {
        job.params.stop.push_back(s);
      }
    }
    const auto needed = estimate_tokens_with_divisor(job.prompt.text, job.model.descriptor.token_divisor);
    const auto window = static_cast<std::size_t>(job.model.descriptor.context_window);
    const auto output = static_cast<std::size_t>(request.params.max_tokens);
    if (output > window || needed > window - output) {
      job.overflow = "context-overflow: prompt needs " + std::to_string(needed) + " tokens plus " +
                     std::to_string(output) + " output tokens, window is " + std::to_string(window);
    }
    jobs.push_back(std::move(job));
  }

  auto run = std::make_shared<Run>();
  run->id = request.fanout_id.empty() ? ids_->next("fan-") : request.fanout_id;
  run->feed = std::make_shared<EventFeed>(run->id, options_.buffer_capacity);
  run->models = request.model_ids;

  {
    std::lock_guard lock(mutex_);
    if (shut_down_) throw Error(ErrorCode::invalid_request, "orchestrator is shut down");
    if (live_.contains(run->id) || finished_lookup_.contains(run->id)) {
      throw Error(ErrorCode::invalid_request, "fanout id '" + run->id + "' already used");
    }
    live_.emplace(run->id, run);
  }
  std::vector<std::shared_ptr<Run>> to_join;
  {
    std::lock_guard lock(mutex_);
    to_join.swap(finished_runs_);
  }
  to_join.clear();  // joins producers of finished runs

  FanoutStream stream(run->feed, run->id, run->models);

  std::size_t dispatched = 0;
  for (const auto& job : jobs) dispatched += job.overflow ? 0 : 1;
  run->remaining = dispatched;

  for (const auto& job : jobs) {
    if (!job.overflow) continue;
    TokenEvent ev;
    ev.model_id = job.model.descriptor.id.value;
    ev.seq = 0;
    ev.kind = TokenEventKind::error;
    ev.finish_reason = FinishReason::error;
    ev.error_message = *job.overflow;
    ev.emitted_at = std::chrono::steady_clock::now();
    run->feed->publish(ev);
  }
  if (dispatched == 0) {
    run->feed->publish_complete();
    finish(run->id);
    return stream;
  }

  for (auto& job : jobs) {
    if (job.overflow) continue;
    // A raw pointer: a shared_ptr here could make a producer the last owner
    // and have it join itself. The Run joins its producers before it dies.
    run->producers.emplace_back([this, run = run.get(), job = std::move(job)](std::stop_token stop) {
      const std::string model_id = job.model.descriptor.id.value;
      std::uint64_t next_seq = 0;
      bool terminal = false;
      const TokenSink sink = [&](const TokenEvent& ev) {
        if (terminal) return;
        next_seq = ev.seq + 1;
        terminal = ev.terminal();
        run->feed->publish(ev);
      };
      std::string failure = "backend stream ended without a terminal event";
      try {
        options_.backend(job.model.backend, job.prompt, job.params,
                         StreamOptions{model_id, job.model.descriptor.served_name, stop}, sink);
      } catch (const std::exception& e) {
        failure = std::string("backend failure: ") + e.what();
      }
      if (!terminal) {
        TokenEvent ev;
        ev.model_id = model_id;
        ev.seq = next_seq;
        ev.kind = TokenEventKind::error;
        ev.finish_reason = FinishReason::error;
        ev.error_message = stop.stop_requested() ? "cancelled" : failure;
        ev.emitted_at = std::chrono::steady_clock::now();
        run->feed->publish(ev);
      }
      if (run->remaining.fetch_sub(1) == 1) {
        run->feed->publish_complete();
        finish(run->id);
      }
    });
  }
  return stream;
}

FanoutStream FanoutOrchestrator::subscribe(const std::string& fanout_id) {
  std::lock_guard lock(mutex_);
  const auto it = live_.find(fanout_id);
  if (it == live_.end()) throw Error(ErrorCode::unknown_fanout, "no live fanout '" + fanout_id + "'");
  return FanoutStream(it->second->feed, it->second->id, it->second->models);
}

void FanoutOrchestrator::finish(const std::string& fanout_id) {
  std::lock_guard lock(mutex_);
  const auto it = live_.find(fanout_id);
  if (it == live_.end()) return;
  finished_runs_.push_back(it->second);
  live_.erase(it);
  finished_ids_.push_back(fanout_id);
  finished_lookup_[fanout_id] = true;
  while (finished_ids_.size() > options_.finished_history) {
    finished_lookup_.erase(finished_ids_.front());
    finished_ids_.pop_front();
  }
}

CancelOutcome FanoutOrchestrator::cancel(const std::string& fanout_id) {
  std::lock_guard lock(mutex_);
  if (const auto it = live_.find(fanout_id); it != live_.end()) {
    for (auto& producer : it->second->producers) producer.request_stop();
    return CancelOutcome::cancelled;
  }
  if (finished_lookup_.contains(fanout_id)) return CancelOutcome::already_finished;
  throw Error(ErrorCode::unknown_fanout, "unknown fanout '" + fanout_id + "'");
}

std::vector<std::string> FanoutOrchestrator::live_fanouts() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : live_) ids.push_back(id);
  return ids;
}

bool FanoutOrchestrator::is_live(const std::string& fanout_id) const {
  std::lock_guard lock(mutex_);
  return live_.contains(fanout_id);
}

void FanoutOrchestrator::shutdown() {
  std::vector<std::shared_ptr<Run>> runs;
  {
    std::lock_guard lock(mutex_);
    shut_down_ = true;
    for (auto& [_, run] : live_) {
      for (auto& producer : run->producers) producer.request_stop();
      runs.push_back(run);
    }
    for (auto& run : finished_runs_) runs.push_back(run);
    finished_runs_.clear();
  }
  for (auto& run : runs) run->feed->close();
  for (auto& run : runs) {
    for (auto& producer : run->producers) {
      if (producer.joinable() && producer.get_id() != std::this_thread::get_id()) producer.join();
    }
  }
}

}  // namespace llmgate
