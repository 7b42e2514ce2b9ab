//! Typed events and the publish/subscribe bus that decouples producers from
//! consumers.
//!
//! Subscriptions are by event type alone: a subscriber never learns (or
//! cares) which component produced an event, so producers can be swapped at
//! run time without touching consumers. The bus keeps an append-only log of
//! everything published, which doubles as the run's audit trail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelEffect, Scalar};

/// Event class, deciding which situation model an event's effects touch.
///
/// `Monitoring` events come from workflow execution and drive the expected
/// model; `Field` events report observed reality and drive the field model.
/// `Cep` marks meta events emitted by the tracking machinery itself (for
/// example an adaptation notice); they never carry model effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventSource {
    Monitoring,
    Field,
    Cep,
}

/// One timestamped, typed occurrence.
///
/// `(timestamp, seq)` totally orders any set of events: `seq` is allocated
/// from a single [`SeqCounter`] per run and never repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    #[serde(rename = "type")]
    pub event_type: String,
    #[serde(rename = "ts")]
    pub timestamp: u64,
    pub seq: u64,
    pub source: EventSource,
    #[serde(default)]
    pub effects: Vec<ModelEffect>,
    #[serde(default)]
    pub payload: BTreeMap<String, Scalar>,
}

impl Event {
    /// Builds an event with the conventional `e{seq}` id.
    pub fn new(event_type: impl Into<String>, timestamp: u64, seq: u64, source: EventSource) -> Event {
        Event {
            id: format!("e{seq}"),
            event_type: event_type.into(),
            timestamp,
            seq,
            source,
            effects: Vec::new(),
            payload: BTreeMap::new(),
        }
    }

    pub fn with_effects(mut self, effects: Vec<ModelEffect>) -> Event {
        self.effects = effects;
        self
    }

    pub fn with_payload_entry(mut self, name: impl Into<String>, value: impl Into<Scalar>) -> Event {
        self.payload.insert(name.into(), value.into());
        self
    }

    /// Sort key giving the global total order.
    pub fn order_key(&self) -> (u64, u64) {
        (self.timestamp, self.seq)
    }

    /// One JSONL line, no trailing newline.
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("event serialization")
    }
}

/// Allocator for the per-run `seq` counter. Sequence numbers start at 1 and
/// strictly increase, so they break timestamp ties deterministically.
#[derive(Debug, Default)]
pub struct SeqCounter {
    next: u64,
}

impl SeqCounter {
    pub fn new() -> SeqCounter {
        SeqCounter { next: 1 }
    }

    pub fn next(&mut self) -> u64 {
        let seq = self.next;
        self.next += 1;
        seq
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("subscriber '{subscriber}' already subscribes to '{event_type}'")]
    DuplicateSubscription { subscriber: String, event_type: String },
    #[error("unknown subscription handle")]
    UnknownSubscription,
}

/// Opaque handle returned by [`EventBus::subscribe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubscriptionHandle(u64);

#[derive(Debug)]
struct Subscription {
    handle: u64,
    subscriber: String,
    event_type: String,
}

/// Type-based publish/subscribe bus with an append-only log.
///
/// Publishing delivers a copy of the event to the inbox of every subscriber
/// whose subscription type matches exactly, in subscription-creation order.
/// There is no replay: a subscription only sees events published after it was
/// created.
#[derive(Debug, Default)]
pub struct EventBus {
    log: Vec<Event>,
    subscriptions: Vec<Subscription>,
    inboxes: BTreeMap<String, Vec<Event>>,
    next_handle: u64,
}

impl EventBus {
    pub fn new() -> EventBus {
        EventBus::default()
    }

    /// Registers `subscriber` for events of exactly `event_type`.
    pub fn subscribe(
        &mut self,
        subscriber: &str,
        event_type: &str,
    ) -> Result<SubscriptionHandle, BusError> {
        let duplicate = self
            .subscriptions
            .iter()
            .any(|s| s.subscriber == subscriber && s.event_type == event_type);
        if duplicate {
            return Err(BusError::DuplicateSubscription {
                subscriber: subscriber.to_string(),
                event_type: event_type.to_string(),
            });
        }
        let handle = self.next_handle;
        self.next_handle += 1;
        self.subscriptions.push(Subscription {
            handle,
            subscriber: subscriber.to_string(),
            event_type: event_type.to_string(),
        });
        Ok(SubscriptionHandle(handle))
    }

    pub fn unsubscribe(&mut self, handle: SubscriptionHandle) -> Result<(), BusError> {
        let position = self
            .subscriptions
            .iter()
            .position(|s| s.handle == handle.0)
            .ok_or(BusError::UnknownSubscription)?;
        self.subscriptions.remove(position);
        Ok(())
    }

    /// Appends the event to the log and delivers it to matching inboxes.
    /// Returns the number of deliveries (0 with no matching subscriber).
    pub fn publish(&mut self, event: Event) -> usize {
        let mut deliveries = 0;
        for subscription in &self.subscriptions {
            if subscription.event_type == event.event_type {
                self.inboxes
                    .entry(subscription.subscriber.clone())
                    .or_default()
                    .push(event.clone());
                deliveries += 1;
            }
        }
        self.log.push(event);
        deliveries
    }

    /// Everything published so far, in publish order.
    pub fn log(&self) -> &[Event] {
        &self.log
    }

    /// Takes the full log, sorted by `(timestamp, seq)`.
    pub fn drain_ordered(&mut self) -> Vec<Event> {
        let mut events = std::mem::take(&mut self.log);
        events.sort_by_key(Event::order_key);
        events
    }

    /// Removes and returns `subscriber`'s pending deliveries, oldest first.
    pub fn take_inbox(&mut self, subscriber: &str) -> Vec<Event> {
        self.inboxes.remove(subscriber).unwrap_or_default()
    }

    /// Pending delivery count for `subscriber` without consuming anything.
    pub fn pending(&self, subscriber: &str) -> usize {
        self.inboxes.get(subscriber).map_or(0, Vec::len)
    }
}
