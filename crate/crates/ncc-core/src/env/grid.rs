//! Grid-maze layout and reachability.

/// A rectangular maze: row-major wall mask, one start cell, one goal cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLevel {
    pub width: usize,
    pub height: usize,
    /// `walls[y * width + x]` — true means the cell is blocked.
    pub walls: Vec<bool>,
    pub start: (usize, usize),
    pub goal: (usize, usize),
}

impl GridLevel {
    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        self.walls[y * self.width + x]
    }

    /// Row-major indices of the non-wall cells.
    pub fn free_cells(&self) -> Vec<usize> {
        (0..self.walls.len()).filter(|&i| !self.walls[i]).collect()
    }
}

/// Shortest path length (in steps) from start to goal, by breadth-first
/// search over the 4-neighborhood. `None` when the goal is unreachable.
pub fn bfs_distance(grid: &GridLevel) -> Option<usize> {
    let (w, h) = (grid.width, grid.height);
    let idx = |x: usize, y: usize| y * w + x;
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = std::collections::VecDeque::new();
    dist[idx(grid.start.0, grid.start.1)] = 0;
    queue.push_back(grid.start);
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == grid.goal {
            return Some(dist[idx(x, y)]);
        }
        let d = dist[idx(x, y)];
        let neighbors = [
            (x as i64, y as i64 - 1),
            (x as i64, y as i64 + 1),
            (x as i64 - 1, y as i64),
            (x as i64 + 1, y as i64),
        ];
        for (nx, ny) in neighbors {
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if grid.is_wall(nx, ny) || dist[idx(nx, ny)] != usize::MAX {
                continue;
            }
            dist[idx(nx, ny)] = d + 1;
            queue.push_back((nx, ny));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfs_on_empty_grid() {
        let grid = GridLevel {
            width: 3,
            height: 3,
            walls: vec![false; 9],
            start: (0, 0),
            goal: (2, 2),
        };
        assert_eq!(bfs_distance(&grid), Some(4));
    }

    #[test]
    fn bfs_unreachable() {
        let mut walls = vec![false; 9];
        walls[5] = true;
        walls[7] = true;
        let grid = GridLevel {
            width: 3,
            height: 3,
            walls,
            start: (0, 0),
            goal: (2, 2),
        };
        assert_eq!(bfs_distance(&grid), None);
    }

    #[test]
    fn bfs_agrees_with_exhaustive_reachability_on_3x3() {
        // Exhaustive reachability by state-graph closure over a sample of the
        // 512 wall masks, fixed start/goal.
        for mask in (0..512u16).step_by(7) {
            let walls: Vec<bool> = (0..9).map(|i| mask >> i & 1 == 1).collect();
            if walls[0] || walls[8] {
                continue;
            }
            let grid = GridLevel {
                width: 3,
                height: 3,
                walls: walls.clone(),
                start: (0, 0),
                goal: (2, 2),
            };
            // transitive closure from start
            let mut reach = vec![false; 9];
            reach[0] = true;
            loop {
                let mut changed = false;
                for y in 0..3 {
                    for x in 0..3 {
                        if !reach[y * 3 + x] {
                            continue;
                        }
                        for (nx, ny) in [
                            (x as i64, y as i64 - 1),
                            (x as i64, y as i64 + 1),
                            (x as i64 - 1, y as i64),
                            (x as i64 + 1, y as i64),
                        ] {
                            if nx < 0 || ny < 0 || nx > 2 || ny > 2 {
                                continue;
                            }
                            let j = ny as usize * 3 + nx as usize;
                            if !walls[j] && !reach[j] {
                                reach[j] = true;
                                changed = true;
                            }
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            assert_eq!(bfs_distance(&grid).is_some(), reach[8], "mask {mask}");
        }
    }
}
