use std::collections::VecDeque;

/// Handle of a live ring allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RingAlloc {
    pub id: u64,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone)]
struct Block {
    offset: u64,
    /// Bytes held, including alignment.
    held: u64,
    freed: bool,
}

/// Circular buffer allocator for packet storage.
///
/// Allocations are contiguous and handed out in ring order. They may be
/// freed in any order, but space is only reclaimed once every older
/// allocation has been freed too, so one slow packet holds back the ring.
#[derive(Debug, Clone)]
pub struct RingAllocator {
    capacity: u64,
    align: u64,
    blocks: VecDeque<Block>,
    first_id: u64,
    tail: u64,
    used: u64,
    peak: u64,
}

impl RingAllocator {
    pub fn new(capacity: u64, align: u64) -> Self {
        assert!(align.is_power_of_two() && capacity.is_multiple_of(align));
        Self {
            capacity,
            align,
            blocks: VecDeque::new(),
            first_id: 0,
            tail: 0,
            used: 0,
            peak: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Bytes not yet reclaimed, including freed blocks stuck behind a live one.
    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn peak_used(&self) -> u64 {
        self.peak
    }

    pub fn live(&self) -> usize {
        self.blocks.iter().filter(|b| !b.freed).count()
    }

    fn head(&self) -> u64 {
        self.blocks.front().map_or(self.tail, |b| b.offset)
    }

    /// Allocates `len` bytes, or `None` if the ring has no contiguous room.
    pub fn alloc(&mut self, len: u64) -> Option<RingAlloc> {
        let size = len.max(1).next_multiple_of(self.align);
        if size > self.capacity {
            return None;
        }
        let (offset, pad) = if self.blocks.is_empty() {
            self.tail = 0;
            (0, 0)
        } else {
            let head = self.head();
            if self.tail > head || (self.tail == head && self.used == 0) {
                if size <= self.capacity - self.tail {
                    (self.tail, 0)
                } else if size <= head {
                    (0, self.capacity - self.tail)
                } else {
                    return None;
                }
            } else if self.tail < head && size <= head - self.tail {
                (self.tail, 0)
            } else {
                return None;
            }
        };
        if pad > 0 {
            // The skipped end of the ring is reclaimed in order like a freed block.
            self.blocks.push_back(Block {
                offset: self.tail,
                held: pad,
                freed: true,
            });
        }
        let id = self.first_id + self.blocks.len() as u64;
        self.blocks.push_back(Block {
            offset,
            held: size,
            freed: false,
        });
        self.tail = (offset + size) % self.capacity;
        self.used += size + pad;
        self.peak = self.peak.max(self.used);
        Some(RingAlloc { id, offset, len: size })
    }

    /// Releases an allocation. Freeing twice is a simulator bug and aborts.
    pub fn free(&mut self, a: RingAlloc) {
        let idx =
            a.id.checked_sub(self.first_id)
                .map(|i| i as usize)
                .filter(|&i| i < self.blocks.len())
                .unwrap_or_else(|| panic!("double free of ring allocation {}", a.id));
        let b = &mut self.blocks[idx];
        assert!(!b.freed, "double free of ring allocation {}", a.id);
        assert_eq!(b.offset, a.offset, "ring allocation {} does not match its handle", a.id);
        b.freed = true;
        while self.blocks.front().is_some_and(|b| b.freed) {
            let b = self.blocks.pop_front().unwrap();
            self.used -= b.held;
            self.first_id += 1;
        }
    }
}
