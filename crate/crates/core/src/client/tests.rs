use std::collections::BTreeSet;

use proptest::prelude::{prop_assert, proptest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::chord::key_of;
use crate::inventory::{FileProperties, ObjectProperties};
use crate::model::LogicalComputerId;
use crate::sim::{SimConfig, World};

fn world(objects: u32, seed: u64) -> World {
    let config = SimConfig { objects, dynamics: false, seed, ..SimConfig::default() };
    World::build(&config, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn client_at(w: &World, p: Coord) -> Client {
    let mut c = Client::new(p, 0.0, w.config.client_config());
    let ring_entry = w.ring.bots().next().unwrap().address;
    c.set_entries(Some(w.can_entry()), Some(ring_entry));
    c
}

fn random_point(w: &World, rng: &mut ChaCha8Rng) -> Coord {
    Coord::new(rng.gen_range(0.0..w.geometry.width), rng.gen_range(0.0..w.geometry.height))
}

/// In-radius objects of the regions the client consults.
fn oracle(w: &World, p: Coord) -> BTreeSet<ObjectId> {
    let regions: BTreeSet<RegionIndex> = neighbor_regions(&w.geometry, p).unwrap().into_iter().collect();
    w.registry
        .values()
        .filter(|o| regions.contains(&w.geometry.region_index(o.ocoord).unwrap()))
        .filter(|o| distance(o.ocoord, p) <= w.config.client_config().r_search)
        .map(|o| o.oid.clone())
        .collect()
}

fn region_set(w: &World, p: Coord) -> BTreeSet<(u32, u32)> {
    neighbor_regions(&w.geometry, p)
        .unwrap()
        .into_iter()
        .map(|r| {
            let c = w.geometry.region_coord(r);
            (c.x as u32, c.y as u32)
        })
        .collect()
}

#[test]
fn neighbor_region_examples() {
    let w = world(0, 1);
    let set = |pts: &[(u32, u32)]| pts.iter().copied().collect::<BTreeSet<(u32, u32)>>();
    assert_eq!(region_set(&w, Coord::new(350.0, 850.0)), set(&[(300, 600), (0, 600), (300, 900), (0, 900)]));
    assert_eq!(region_set(&w, Coord::new(50.0, 50.0)), set(&[(0, 0)]));
    assert_eq!(region_set(&w, Coord::new(450.0, 750.0)), set(&[(300, 600)]));
    // One axis on the midline.
    assert_eq!(region_set(&w, Coord::new(450.0, 610.0)), set(&[(300, 600), (300, 300)]));
}

#[test]
fn neighbor_regions_sizes() {
    let w = world(0, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let p = random_point(&w, &mut rng);
        let regions = neighbor_regions(&w.geometry, p).unwrap();
        assert!(matches!(regions.len(), 1 | 2 | 4));
        assert_eq!(regions[0], w.geometry.region_index(p).unwrap());
        let distinct: BTreeSet<_> = regions.iter().collect();
        assert_eq!(distinct.len(), regions.len());
    }
}

#[test]
fn crc_matches_filter_oracle() {
    let mut w = world(300, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..40 {
        let p = random_point(&w, &mut rng);
        let mut c = client_at(&w, p);
        let mut hops = HopTally::default();
        let (crc, _) = c.construct_crc_inventory(&mut w.network(), &mut hops).unwrap();
        assert_eq!(crc.oids(), oracle(&w, p));
        assert_eq!(crc.oids().len(), crc.objects.len());
        assert!(!crc.retry);
        assert!(crc.objects.iter().all(|o| distance(o.ocoord, p) <= crc.radius));
    }
}

#[test]
fn empty_world_visits_every_in_radius_grid() {
    let mut w = world(0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let p = random_point(&w, &mut rng);
        let mut c = client_at(&w, p);
        let report = c.run_cycle(&mut w.network(), Strategy::Proximity);
        assert!(report.loaded.is_empty());
        let g = w.geometry;
        let expected = (0..g.grids_x())
            .flat_map(|ix| (0..g.grids_y()).map(move |iy| GridIndex::new(ix, iy)))
            .filter(|&gi| distance(g.grid_coord(gi).corner(), p) <= w.config.client_config().r_search)
            .count();
        assert_eq!(report.grids_visited, expected);
    }
}

#[test]
fn proximity_loads_exactly_the_oracle_set() {
    let mut w = world(100, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let p = random_point(&w, &mut rng);
        let mut c = client_at(&w, p);
        let report = c.run_cycle(&mut w.network(), Strategy::Proximity);
        assert!(report.deferred.is_empty(), "{:?}", report.deferred);
        assert_eq!(report.loaded, oracle(&w, p));
        let levels: Vec<u32> = report
            .events
            .iter()
            .filter_map(|e| match e.phase {
                LoadPhase::Traversal { level } => Some(level),
                _ => None,
            })
            .collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]), "{levels:?}");
    }
}

#[test]
fn origin_grid_objects_load_first() {
    let mut w = world(200, 5);
    let target = w.registry.values().next().unwrap().clone();
    let mut c = client_at(&w, target.ocoord);
    let report = c.run_cycle(&mut w.network(), Strategy::Proximity);
    let g0 = w.geometry.grid_index(target.ocoord).unwrap();
    let first = &report.events[0];
    assert_eq!(first.phase, LoadPhase::Traversal { level: 0 });
    assert_eq!(w.geometry.grid_index(w.registry[&first.oid].ocoord).unwrap(), g0);
}

#[test]
fn loaded_sets_agree_across_strategies() {
    let w = world(250, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let p = random_point(&w, &mut rng);
        let sets: Vec<BTreeSet<ObjectId>> = Strategy::ALL
            .iter()
            .map(|&s| {
                let mut w = w.clone();
                let mut c = client_at(&w, p);
                c.run_cycle(&mut w.network(), s).loaded
            })
            .collect();
        assert_eq!(sets[0], sets[1]);
        assert_eq!(sets[1], sets[2]);
        assert_eq!(sets[0], oracle(&w, p));
    }
}

#[test]
fn second_cycle_is_free_and_one_file_costs_one_transfer() {
    let mut w = world(150, 7);
    let p = w.registry.values().nth(3).unwrap().ocoord;
    for (i, strategy) in Strategy::ALL.into_iter().enumerate() {
        let mut c = client_at(&w, p);
        let first = c.run_cycle(&mut w.network(), strategy);
        assert!(first.transfers() > 0);
        let second = c.run_cycle(&mut w.network(), strategy);
        assert_eq!(second.transfers(), 0);
        assert!(second.events.iter().all(|e| e.source == LoadSource::Cache && e.messages == 0));

        let oid = first.loaded.iter().next().unwrap().clone();
        w.mutate_file(&oid, "type01", "file00", vec![i as u8; 64]).unwrap();
        let third = c.run_cycle(&mut w.network(), strategy);
        assert_eq!(third.transfers(), 1, "{strategy}");
        assert_eq!(c.cache[&oid].ohash, w.registry[&oid].ohash);
        assert_eq!(third.loaded, first.loaded);
    }
}

#[test]
fn property_change_needs_no_download() {
    let mut w = world(120, 8);
    let obj = w.registry.values().next().unwrap().clone();
    let mut c = client_at(&w, obj.ocoord);
    c.run_cycle(&mut w.network(), Strategy::Proximity);
    let mut changed = obj.clone();
    changed.properties.version = "2".into();
    let changed = crate::inventory::recompute_hashes(&changed).unwrap();
    let entry = w.can_entry();
    w.can.inventory_upsert(entry, &changed).unwrap();
    let report = c.run_cycle(&mut w.network(), Strategy::Proximity);
    assert_eq!(report.transfers(), 0);
    assert_eq!(c.cache[&obj.oid].ohash, changed.ohash);
}

#[test]
fn stale_addressing_bot_costs_one_redirect_and_a_lookup() {
    let base = world(150, 9);
    let obj = base.registry.values().next().unwrap().clone();
    let event_of = |w: &mut World| {
        let mut c = client_at(w, obj.ocoord);
        let r = c.run_cycle(&mut w.network(), Strategy::Proximity);
        assert!(r.loaded.contains(&obj.oid));
        (r.events.into_iter().find(|e| e.oid == obj.oid).unwrap(), r.hops)
    };
    let (fresh, fresh_hops) = event_of(&mut base.clone());
    assert_eq!(fresh_hops.ring_routing, 0);

    // A new bot takes over the object's key; the region record still names
    // the old owner.
    let mut stale = base.clone();
    let key = key_of(&obj.lcid, stale.ring.config().bits);
    stale.ring.join_with_id(NodeAddress(9_999_999), key).unwrap();
    let (event, hops) = event_of(&mut stale);
    assert!(hops.ring_routing > 0);
    let lookup = {
        let mut ring = stale.ring.clone();
        let start = ring.entry_bot(stale.ring.bots().next().unwrap().address).unwrap();
        ring.lookup(start, key).unwrap()
    };
    assert!(event.messages > fresh.messages);
    assert!(event.messages >= fresh.messages + lookup.hops as u64);
}

#[test]
fn basic_cost_tracks_ring_lookups() {
    let mut w = world(400, 10);
    let n = w.ring.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let p = random_point(&w, &mut rng);
        let mut probe = client_at(&w, p);
        let mut crc_hops = HopTally::default();
        probe.construct_crc_inventory(&mut w.network(), &mut crc_hops).unwrap();
        let mut c = client_at(&w, p);
        let report = c.run_cycle(&mut w.network(), Strategy::Basic);
        let k = report.loaded.len() as f64;
        let load = (report.hops.total() - crc_hops.total()) as f64;
        assert!(load >= k * n.log2().floor() / 2.0, "{load} for {k}");
        assert!(load <= 2.0 * k * n.log2(), "{load} for {k}");
    }
}

#[test]
fn distance_sorted_loads_nearest_first() {
    let mut w = world(200, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let p = random_point(&w, &mut rng);
        let mut c = client_at(&w, p);
        let report = c.run_cycle(&mut w.network(), Strategy::DistanceSorted);
        let d: Vec<f64> = report.events.iter().map(|e| distance(w.registry[&e.oid].ocoord, p)).collect();
        assert!(d.windows(2).all(|x| x[0] <= x[1]));
        let times: Vec<u64> = report.events.iter().map(|e| e.time).collect();
        assert!(times.windows(2).all(|t| t[0] <= t[1]));
    }
}

#[test]
fn delays_bound_each_other() {
    let mut w = world(300, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in Strategy::ALL {
        let p = random_point(&w, &mut rng);
        let mut c = client_at(&w, p);
        let r = c.run_cycle(&mut w.network(), s);
        assert!(r.crc_ready <= r.perceived_delay);
        assert!(r.perceived_delay <= r.total_delay);
    }
}

#[test]
fn departed_entry_falls_back() {
    let mut w = world(100, 13);
    let p = w.registry.values().next().unwrap().ocoord;
    let mut c = client_at(&w, p);
    let gone = w.can.addresses().nth(5).unwrap();
    c.set_entries(Some(gone), c.entries().1);
    w.can.leave(gone).unwrap();
    let r = c.run_cycle(&mut w.network(), Strategy::Proximity);
    assert_eq!(r.loaded, oracle(&w, p));
    assert_ne!(c.entries().0, Some(gone));
}

fn cached(oid: &str, x: f64, y: f64, bytes: usize) -> ObjectEntry {
    ObjectEntry::build(
        ObjectId::new(oid),
        Coord::new(x, y),
        LogicalComputerId::new("lc"),
        ObjectProperties::new(oid, "a", "1"),
        vec![("t".into(), vec![(FileProperties::named("f"), vec![0; bytes])])],
    )
    .unwrap()
}

fn cache_client(capacity: u64, objects: &[ObjectEntry]) -> Client {
    let config = ClientConfig { r_search: 212.0, perception_range: 100.0, cache_capacity: Some(capacity) };
    let mut c = Client::new(Coord::new(500.0, 500.0), 0.0, config);
    for o in objects {
        c.cache.insert(o.oid.clone(), o.clone());
    }
    c
}

#[test]
fn eviction_drops_farthest() {
    let objs = [cached("near", 510.0, 500.0, 10), cached("mid", 700.0, 500.0, 10), cached("far", 900.0, 500.0, 10)];
    let mut c = cache_client(20, &objs);
    assert_eq!(c.evict_cache(), vec![ObjectId::new("far")]);
    assert_eq!(c.cache_bytes(), 20);
    let mut c = cache_client(30, &objs);
    assert!(c.evict_cache().is_empty());
}

#[test]
fn eviction_reaches_in_range_objects_last() {
    let objs = [cached("a", 510.0, 500.0, 10), cached("b", 550.0, 500.0, 10), cached("out", 800.0, 500.0, 5)];
    let mut c = cache_client(10, &objs);
    assert_eq!(c.evict_cache(), vec![ObjectId::new("out"), ObjectId::new("b")]);
    assert_eq!(c.cache_bytes(), 10);
    let mut c = cache_client(9, &objs);
    c.evict_cache();
    assert!(c.cache.is_empty());
}

#[test]
fn unbounded_cache_never_evicts() {
    let objs = [cached("a", 0.0, 0.0, 1000)];
    let mut c = cache_client(0, &objs);
    c.config.cache_capacity = None;
    assert!(c.evict_cache().is_empty());
}

proptest! {
    #[test]
    fn eviction_fits_and_keeps_nearest(
        items in proptest::collection::vec((0.0f64..1000.0, 0.0f64..1000.0, 1usize..50), 1..30),
        capacity in 0u64..800,
    ) {
        let objs: Vec<ObjectEntry> = items.iter().enumerate().map(|(i, &(x, y, b))| cached(&format!("o{i}"), x, y, b)).collect();
        let mut c = cache_client(capacity, &objs);
        let evicted = c.evict_cache();
        prop_assert!(c.cache_bytes() <= capacity);
        let p = c.position;
        let kept = c.cache.values().map(|o| distance(o.ocoord, p)).fold(0.0, f64::max);
        for oid in &evicted {
            let o = objs.iter().find(|o| &o.oid == oid).unwrap();
            prop_assert!(distance(o.ocoord, p) >= kept);
        }
        // Nothing evicted beyond what was needed.
        if let Some(last) = evicted.last() {
            let o = objs.iter().find(|o| &o.oid == last).unwrap();
            prop_assert!(c.cache_bytes() + o.payload_bytes() > capacity);
        }
    }
}
