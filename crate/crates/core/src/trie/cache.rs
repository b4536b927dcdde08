use std::collections::{BTreeMap, HashMap};
use std::num::NonZeroUsize;
use std::sync::{Arc, Condvar, Mutex};

use super::KgTrie;
use crate::kg::EntityId;

/// Identifies a question-specific trie: the question entity set, the hop
/// limit, and the vocabulary it was tokenized with.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrieKey {
    entities: Vec<EntityId>,
    hops: u32,
    fingerprint: u64,
}

impl TrieKey {
    pub fn new(entities: &[EntityId], hops: u32, fingerprint: u64) -> Self {
        let mut entities = entities.to_vec();
        entities.sort_unstable();
        entities.dedup();
        Self {
            entities,
            hops,
            fingerprint,
        }
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }
}

struct Entry {
    trie: Arc<KgTrie>,
    tick: u64,
}

#[derive(Default)]
struct Inner {
    entries: HashMap<TrieKey, Entry>,
    recency: BTreeMap<u64, TrieKey>,
    in_flight: HashMap<TrieKey, Arc<Pending>>,
    tick: u64,
    hits: u64,
    misses: u64,
}

#[derive(Default)]
struct Pending {
    done: Mutex<bool>,
    cv: Condvar,
}

/// Bounded LRU cache of tries. Concurrent requests for the same missing key
/// run the builder once; the others wait for its result.
pub struct TrieCache {
    capacity: NonZeroUsize,
    inner: Mutex<Inner>,
}

/// Default number of cached tries.
pub const DEFAULT_CAPACITY: usize = 1024;

impl Default for TrieCache {
    fn default() -> Self {
        Self::new(NonZeroUsize::new(DEFAULT_CAPACITY).unwrap())
    }
}

impl TrieCache {
    pub fn new(capacity: NonZeroUsize) -> Self {
        Self {
            capacity,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity.get()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.inner.lock().unwrap().hits
    }

    pub fn misses(&self) -> u64 {
        self.inner.lock().unwrap().misses
    }

    pub fn contains(&self, key: &TrieKey) -> bool {
        self.inner.lock().unwrap().entries.contains_key(key)
    }

    /// Returns the cached trie for `key`, or runs `build` and caches its result.
    /// A failed build leaves the cache untouched and is not counted.
    pub fn get_or_build<F, E>(&self, key: &TrieKey, build: F) -> Result<Arc<KgTrie>, E>
    where
        F: FnOnce() -> Result<KgTrie, E>,
    {
        let pending = loop {
            let mut inner = self.inner.lock().unwrap();
            if let Some(trie) = inner.touch(key) {
                inner.hits += 1;
                return Ok(trie);
            }
            match inner.in_flight.get(key).cloned() {
                Some(p) => {
                    drop(inner);
                    let mut done = p.done.lock().unwrap();
                    while !*done {
                        done = p.cv.wait(done).unwrap();
                    }
                }
                None => {
                    let p = Arc::new(Pending::default());
                    inner.in_flight.insert(key.clone(), p.clone());
                    break p;
                }
            }
        };

        let built = build();

        let mut inner = self.inner.lock().unwrap();
        inner.in_flight.remove(key);
        let result = built.map(|trie| {
            inner.misses += 1;
            let trie = Arc::new(trie);
            inner.insert(key.clone(), trie.clone(), self.capacity.get());
            trie
        });
        drop(inner);
        *pending.done.lock().unwrap() = true;
        pending.cv.notify_all();
        result
    }
}

impl Inner {
    fn touch(&mut self, key: &TrieKey) -> Option<Arc<KgTrie>> {
        self.tick += 1;
        let tick = self.tick;
        let entry = self.entries.get_mut(key)?;
        self.recency.remove(&entry.tick);
        entry.tick = tick;
        self.recency.insert(tick, key.clone());
        Some(entry.trie.clone())
    }

    fn insert(&mut self, key: TrieKey, trie: Arc<KgTrie>, capacity: usize) {
        self.tick += 1;
        let tick = self.tick;
        if let Some(old) = self.entries.insert(key.clone(), Entry { trie, tick }) {
            self.recency.remove(&old.tick);
        }
        self.recency.insert(tick, key);
        while self.entries.len() > capacity {
            let (_, lru) = self.recency.pop_first().expect("recency tracks every entry");
            self.entries.remove(&lru);
        }
    }
}
