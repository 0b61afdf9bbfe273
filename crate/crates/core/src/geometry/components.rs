use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::volume::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &SIX,
            Connectivity::TwentySix => &TWENTY_SIX,
        }
    }
}

const SIX: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

const TWENTY_SIX: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// Inclusive voxel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    fn point(p: [usize; 3]) -> Self {
        Self { min: p, max: p }
    }

    fn include(&mut self, p: [usize; 3]) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }
}

/// Partition of a binary grid's foreground into maximal connected pieces.
///
/// Ids are dense `1..=K` and assigned in x-fastest scan order of each
/// component's first voxel; background is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub connectivity: Connectivity,
    pub dims: Dims,
    pub ids: Vec<u32>,
    pub sizes: Vec<usize>,
    pub bounds: Vec<BoundingBox>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn size(&self, id: u32) -> usize {
        self.sizes[id as usize - 1]
    }

    /// Id of the largest component (lowest id on ties).
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, i as u32 + 1));
            }
        }
        best.map(|(_, id)| id)
    }

    pub fn voxels_of(&self, id: u32) -> Vec<bool> {
        self.ids.iter().map(|&c| c == id).collect()
    }
}

pub fn connected_components(dims: Dims, mask: &[bool], connectivity: Connectivity) -> ComponentSet {
    assert_eq!(mask.len(), dims.len(), "mask length does not match dims");
    let mut ids = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut bounds = Vec::new();
    let mut queue = VecDeque::new();
    let offsets = connectivity.offsets();

    for seed in 0..mask.len() {
        if !mask[seed] || ids[seed] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        ids[seed] = id;
        let mut size = 0usize;
        let mut bbox = BoundingBox::point(dims.coords(seed));
        queue.push_back(seed);
        while let Some(cur) = queue.pop_front() {
            size += 1;
            let c = dims.coords(cur);
            bbox.include(c);
            for o in offsets {
                let Some(n) = dims.checked_index(c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2])
                else {
                    continue;
                };
                if mask[n] && ids[n] == 0 {
                    ids[n] = id;
                    queue.push_back(n);
                }
            }
        }
        sizes.push(size);
        bounds.push(bbox);
    }

    ComponentSet {
        connectivity,
        dims,
        ids,
        sizes,
        bounds,
    }
}

/// 8-connected labelling of a 2D row-major grid. Returns per-pixel ids
/// (0 = background) and the component count.
pub fn label_2d_eight(width: usize, height: usize, mask: &[bool]) -> (Vec<u32>, usize) {
    assert_eq!(mask.len(), width * height);
    let mut ids = vec![0u32; mask.len()];
    let mut count = 0usize;
    let mut stack = Vec::new();
    for seed in 0..mask.len() {
        if !mask[seed] || ids[seed] != 0 {
            continue;
        }
        count += 1;
        let id = count as u32;
        ids[seed] = id;
        stack.push(seed);
        while let Some(cur) = stack.pop() {
            let (x, y) = ((cur % width) as i64, (cur / width) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let n = ny as usize * width + nx as usize;
                    if mask[n] && ids[n] == 0 {
                        ids[n] = id;
                        stack.push(n);
                    }
                }
            }
        }
    }
    (ids, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_has_no_components() {
        let d = Dims::new(4, 4, 4);
        let cs = connected_components(d, &[false; 64], Connectivity::TwentySix);
        assert!(cs.is_empty());
        assert_eq!(cs.largest(), None);
    }

    #[test]
    fn corner_neighbours_depend_on_connectivity() {
        let d = Dims::new(2, 2, 2);
        let mut m = vec![false; 8];
        m[d.index(0, 0, 0)] = true;
        m[d.index(1, 1, 1)] = true;
        assert_eq!(connected_components(d, &m, Connectivity::Six).len(), 2);
        assert_eq!(connected_components(d, &m, Connectivity::TwentySix).len(), 1);
    }

    #[test]
    fn sizes_and_bounds() {
        let d = Dims::new(5, 3, 1);
        let mut m = vec![false; 15];
        for x in 0..3 {
            m[d.index(x, 1, 0)] = true;
        }
        m[d.index(4, 2, 0)] = true;
        let cs = connected_components(d, &m, Connectivity::Six);
        assert_eq!(cs.sizes, vec![3, 1]);
        assert_eq!(cs.bounds[0], BoundingBox { min: [0, 1, 0], max: [2, 1, 0] });
        assert_eq!(cs.largest(), Some(1));
    }

    #[test]
    fn twenty_six_offsets_are_unique() {
        let mut v = TWENTY_SIX.to_vec();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), 26);
    }

    #[test]
    fn eight_connected_diagonal_joins() {
        let m = [true, false, false, true];
        assert_eq!(label_2d_eight(2, 2, &m).1, 1);
        let m = [true, false, false, false, false, true];
        assert_eq!(label_2d_eight(3, 2, &m).1, 2);
    }
}
