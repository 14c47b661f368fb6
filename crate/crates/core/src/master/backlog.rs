use std::collections::VecDeque;

use crate::protocol::StreamMessage;

/// Master-resident FIFO of messages that found no available PE.
#[derive(Debug, Default, Clone)]
pub struct Backlog {
    entries: VecDeque<StreamMessage>,
    high_water: usize,
}

impl Backlog {
    pub fn push_back(&mut self, message: StreamMessage) -> usize {
        self.entries.push_back(message);
        self.high_water = self.high_water.max(self.entries.len());
        self.entries.len()
    }

    /// Returns a message whose dispatch failed to the head of the queue.
    pub fn push_front(&mut self, message: StreamMessage) {
        self.entries.push_front(message);
        self.high_water = self.high_water.max(self.entries.len());
    }

    /// Removes the oldest message for `image:tag`.
    pub fn take_oldest(&mut self, image: &str, tag: &str) -> Option<StreamMessage> {
        let pos = self
            .entries
            .iter()
            .position(|m| m.image == image && m.tag == tag)?;
        self.entries.remove(pos)
    }

    pub fn has(&self, image: &str, tag: &str) -> bool {
        self.entries.iter().any(|m| m.image == image && m.tag == tag)
    }

    pub fn oldest(&self) -> Option<&StreamMessage> {
        self.entries.front()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn iter(&self) -> impl Iterator<Item = &StreamMessage> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(id: &str, image: &str) -> StreamMessage {
        StreamMessage::new(id, image, "t", Vec::new(), 0)
    }

    #[test]
    fn per_image_fifo() {
        let mut b = Backlog::default();
        b.push_back(msg("a1", "a"));
        b.push_back(msg("b1", "b"));
        b.push_back(msg("a2", "a"));
        assert_eq!(b.take_oldest("a", "t").unwrap().message_id, "a1");
        assert_eq!(b.take_oldest("a", "t").unwrap().message_id, "a2");
        assert!(b.take_oldest("a", "t").is_none());
        assert_eq!(b.len(), 1);
        assert_eq!(b.high_water(), 3);
    }

    #[test]
    fn requeue_goes_to_front() {
        let mut b = Backlog::default();
        b.push_back(msg("m2", "a"));
        b.push_front(msg("m1", "a"));
        assert_eq!(b.oldest().unwrap().message_id, "m1");
    }
}
