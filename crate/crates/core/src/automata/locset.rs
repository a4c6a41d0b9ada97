use std::fmt;

/// Set of automaton locations, as a bitset over location indices (< 128).
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocSet(pub u128);

pub const MAX_LOCATIONS: usize = 128;

impl LocSet {
    pub const EMPTY: LocSet = LocSet(0);

    pub fn full(n: usize) -> LocSet {
        if n >= 128 {
            LocSet(u128::MAX)
        } else {
            LocSet((1u128 << n) - 1)
        }
    }

    pub fn single(l: usize) -> LocSet {
        LocSet(1u128 << l)
    }

    pub fn from_iter(it: impl IntoIterator<Item = usize>) -> LocSet {
        let mut s = LocSet::EMPTY;
        for l in it {
            s.insert(l);
        }
        s
    }

    pub fn contains(self, l: usize) -> bool {
        self.0 >> l & 1 == 1
    }

    pub fn insert(&mut self, l: usize) {
        self.0 |= 1u128 << l;
    }

    pub fn remove(&mut self, l: usize) {
        self.0 &= !(1u128 << l);
    }

    pub fn union(self, o: LocSet) -> LocSet {
        LocSet(self.0 | o.0)
    }

    pub fn inter(self, o: LocSet) -> LocSet {
        LocSet(self.0 & o.0)
    }

    pub fn minus(self, o: LocSet) -> LocSet {
        LocSet(self.0 & !o.0)
    }

    pub fn is_subset(self, o: LocSet) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let l = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(l)
            }
        })
    }
}

impl fmt::Debug for LocSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
