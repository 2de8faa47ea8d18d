#!/usr/bin/env python3
"""Regenerate tests/fixtures: three small schemas, their query corpora, and
expected results computed by SQLite.

    python3 tools/make_fixtures.py [--out tests/fixtures]
"""

import argparse
import csv
import random
import sqlite3
from pathlib import Path

SHOP_QUERIES = """
SELECT c.name, c.region FROM customers c WHERE c.signup_year > 2018
SELECT o.status, COUNT(*), SUM(o.amount) FROM orders o GROUP BY o.status
SELECT o.id, o.amount FROM orders o WHERE o.status = 'shipped' LIMIT 7
SELECT c.region, COUNT(*) FROM orders o JOIN customers c ON o.customer_id = c.id WHERE o.amount > 100 GROUP BY c.region
SELECT o.customer_id, SUM(o.amount), COUNT(*) FROM orders o JOIN customers c ON o.customer_id = c.id WHERE c.segment = 'retail' GROUP BY o.customer_id
SELECT o.customer_id, AVG(o.amount) FROM orders o JOIN customers c ON o.customer_id = c.id WHERE c.region <> 'west' GROUP BY o.customer_id
SELECT i.product_id, SUM(i.qty), MAX(i.price) FROM items i JOIN products p ON i.product_id = p.id WHERE p.category = 'tools' GROUP BY i.product_id
SELECT p.category, SUM(i.qty) FROM items i JOIN products p ON i.product_id = p.id GROUP BY p.category
SELECT c.name, o.id, o.amount FROM customers c JOIN orders o ON c.id = o.customer_id WHERE o.order_day >= 300 AND c.region = 'north'
SELECT c.region, p.category, COUNT(*) FROM customers c JOIN orders o ON c.id = o.customer_id JOIN items i ON o.id = i.order_id JOIN products p ON i.product_id = p.id GROUP BY c.region, p.category
SELECT o.id, i.qty FROM items i JOIN orders o ON i.order_id = o.id WHERE i.qty >= 4 AND o.status = 'returned'
SELECT p.brand, MIN(p.list_price), MAX(p.list_price) FROM products p GROUP BY p.brand
SELECT o.id, o.amount FROM orders o WHERE o.amount < 50.5 ORDER BY o.id DESC LIMIT 5
SELECT c.region, COUNT(*) FROM customers c GROUP BY c.region ORDER BY c.region LIMIT 3
SELECT o.customer_id, MIN(o.order_day) FROM orders o JOIN customers c ON o.customer_id = c.id GROUP BY o.customer_id ORDER BY o.customer_id LIMIT 10
SELECT i.order_id, COUNT(*), SUM(i.qty) FROM items i JOIN orders o ON i.order_id = o.id WHERE o.status = 'shipped' AND i.price > 20 GROUP BY i.order_id
SELECT COUNT(*) FROM orders o JOIN customers c ON o.customer_id = c.id JOIN items i ON i.order_id = o.id WHERE c.segment = 'wholesale'
SELECT o.status, AVG(o.amount), MAX(o.order_day) FROM orders o WHERE o.order_day <= 200 GROUP BY o.status
SELECT i.id, p.brand FROM items i JOIN products p ON i.product_id = p.id WHERE p.list_price >= 75 ORDER BY i.id LIMIT 12
SELECT c.segment, SUM(o.amount) FROM customers c JOIN orders o ON c.id = o.customer_id WHERE o.status <> 'cancelled' GROUP BY c.segment
SELECT p.category, p.brand, COUNT(*) FROM products p WHERE p.list_price > 10 GROUP BY p.category, p.brand
SELECT i.product_id, AVG(i.price) FROM items i JOIN products p ON i.product_id = p.id GROUP BY i.product_id ORDER BY i.product_id DESC LIMIT 6
SELECT c.id, c.name FROM customers c WHERE c.region = 'south' AND c.signup_year < 2020 LIMIT 4
SELECT COUNT(*), SUM(i.qty) FROM items i
"""

FLIGHT_QUERIES = """
SELECT f.id, f.distance FROM flights f WHERE f.delay_min > 45
SELECT f.airline_id, COUNT(*), AVG(f.delay_min) FROM flights f GROUP BY f.airline_id
SELECT a.name, COUNT(*) FROM flights f JOIN airlines a ON f.airline_id = a.id GROUP BY a.name
SELECT f.airline_id, SUM(f.distance) FROM flights f JOIN airlines a ON f.airline_id = a.id WHERE a.alliance = 'star' GROUP BY f.airline_id
SELECT f.origin_id, COUNT(*), MAX(f.delay_min) FROM flights f JOIN airports p ON f.origin_id = p.id WHERE p.country = 'de' GROUP BY f.origin_id
SELECT p.city, f.id FROM flights f JOIN airports p ON f.dest_id = p.id WHERE p.hub_size >= 3 AND f.dep_hour < 8
SELECT a.alliance, p.country, COUNT(*) FROM flights f JOIN airlines a ON f.airline_id = a.id JOIN airports p ON f.origin_id = p.id GROUP BY a.alliance, p.country
SELECT f.id, f.dep_hour FROM flights f WHERE f.distance > 1500 LIMIT 9
SELECT f.id, a.name, f.delay_min FROM flights f JOIN airlines a ON f.airline_id = a.id WHERE f.delay_min >= 60 ORDER BY f.id LIMIT 8
SELECT c.role, COUNT(*), AVG(c.years) FROM crew c GROUP BY c.role
SELECT a.name, c.role, COUNT(*) FROM crew c JOIN airlines a ON c.airline_id = a.id WHERE c.years > 5 GROUP BY a.name, c.role
SELECT c.airline_id, MIN(c.years), MAX(c.years) FROM crew c JOIN airlines a ON c.airline_id = a.id WHERE a.alliance <> 'none' GROUP BY c.airline_id
SELECT COUNT(*) FROM flights f JOIN airports p ON f.origin_id = p.id JOIN airports q ON f.dest_id = q.id WHERE p.country = 'us' AND q.hub_size > 1
SELECT f.dest_id, AVG(f.distance) FROM flights f JOIN airports q ON f.dest_id = q.id GROUP BY f.dest_id ORDER BY f.dest_id LIMIT 5
SELECT p.code, p.city FROM airports p WHERE p.hub_size = 1
SELECT f.dep_hour, COUNT(*) FROM flights f WHERE f.delay_min <= 0 GROUP BY f.dep_hour ORDER BY f.dep_hour DESC LIMIT 6
SELECT a.name, SUM(f.distance), COUNT(*) FROM airlines a JOIN flights f ON a.id = f.airline_id JOIN airports q ON f.dest_id = q.id WHERE q.hub_size > 2 GROUP BY a.name
SELECT f.id, q.code FROM flights f JOIN airports q ON f.dest_id = q.id WHERE f.dep_hour >= 20 AND q.country <> 'us'
SELECT p.country, COUNT(*) FROM airports p GROUP BY p.country
SELECT f.airline_id, f.origin_id, COUNT(*) FROM flights f WHERE f.distance < 800 GROUP BY f.airline_id, f.origin_id
SELECT c.id, c.years FROM crew c WHERE c.role = 'pilot' ORDER BY c.id DESC LIMIT 4
SELECT a.alliance, AVG(f.delay_min) FROM flights f JOIN airlines a ON f.airline_id = a.id WHERE f.distance >= 500 GROUP BY a.alliance
SELECT MIN(f.distance), MAX(f.distance), SUM(f.delay_min) FROM flights f JOIN crew c ON f.airline_id = c.airline_id WHERE c.role = 'purser'
"""

SCHOOL_QUERIES = """
SELECT s.name, s.house FROM students s WHERE s.cohort = 2022
SELECT e.term, COUNT(*), AVG(e.grade) FROM enrollments e GROUP BY e.term
SELECT e.student_id, AVG(e.grade) FROM enrollments e JOIN students s ON e.student_id = s.id WHERE s.house = 'raven' GROUP BY e.student_id
SELECT e.course_id, COUNT(*), MAX(e.grade) FROM enrollments e JOIN courses c ON e.course_id = c.id WHERE c.dept = 'math' GROUP BY e.course_id
SELECT c.dept, SUM(c.credits) FROM enrollments e JOIN courses c ON e.course_id = c.id GROUP BY c.dept
SELECT s.house, c.dept, COUNT(*) FROM students s JOIN enrollments e ON s.id = e.student_id JOIN courses c ON e.course_id = c.id WHERE e.grade >= 80 GROUP BY s.house, c.dept
SELECT s.name, e.grade FROM students s JOIN enrollments e ON s.id = e.student_id WHERE e.grade < 55 AND s.cohort >= 2021
SELECT e.id, e.grade FROM enrollments e WHERE e.term = 'fall' LIMIT 10
SELECT e.id, c.dept FROM enrollments e JOIN courses c ON e.course_id = c.id WHERE c.credits > 3 ORDER BY e.id DESC LIMIT 7
SELECT r.building, COUNT(*) FROM sessions x JOIN rooms r ON x.room_id = r.id GROUP BY r.building
SELECT x.course_id, COUNT(*), MIN(x.hour) FROM sessions x JOIN courses c ON x.course_id = c.id WHERE c.level <= 2 GROUP BY x.course_id
SELECT c.dept, r.building, COUNT(*) FROM sessions x JOIN courses c ON x.course_id = c.id JOIN rooms r ON x.room_id = r.id WHERE r.capacity > 30 GROUP BY c.dept, r.building
SELECT x.weekday, COUNT(*) FROM sessions x GROUP BY x.weekday ORDER BY x.weekday LIMIT 3
SELECT c.id, c.dept FROM courses c WHERE c.credits = 4 AND c.level > 1
SELECT e.student_id, SUM(e.grade), COUNT(*) FROM enrollments e JOIN students s ON e.student_id = s.id GROUP BY e.student_id ORDER BY e.student_id LIMIT 8
SELECT COUNT(*) FROM students s JOIN enrollments e ON s.id = e.student_id JOIN courses c ON e.course_id = c.id WHERE c.dept = 'art' AND s.house <> 'lion'
SELECT s.cohort, AVG(e.grade) FROM students s JOIN enrollments e ON s.id = e.student_id GROUP BY s.cohort
SELECT r.id, r.capacity FROM rooms r WHERE r.capacity >= 25 ORDER BY r.id LIMIT 5
SELECT e.course_id, e.term, COUNT(*) FROM enrollments e WHERE e.grade > 70 GROUP BY e.course_id, e.term
SELECT x.id, r.building, c.dept FROM sessions x JOIN rooms r ON x.room_id = r.id JOIN courses c ON x.course_id = c.id WHERE x.hour >= 15 AND c.level = 3
SELECT s.house, COUNT(*) FROM students s GROUP BY s.house
SELECT MAX(e.grade), MIN(e.grade), AVG(e.grade) FROM enrollments e JOIN courses c ON e.course_id = c.id WHERE c.level = 1
SELECT x.room_id, MAX(x.hour) FROM sessions x JOIN rooms r ON x.room_id = r.id WHERE r.building = 'north' GROUP BY x.room_id
"""


def shop(rng):
    regions = ["north", "south", "east", "west"]
    segments = ["retail", "wholesale", "online"]
    statuses = ["shipped", "pending", "returned", "cancelled"]
    categories = ["tools", "garden", "toys", "books", "kitchen"]
    brands = ["acme", "globex", "initech", "umbrella", "hooli", "stark"]
    customers = [(i, f"cust{i:03d}", rng.choice(regions), rng.choice(segments), rng.randint(2012, 2024))
                 for i in range(1, 41)]
    products = [(i, rng.choice(categories), rng.choice(brands), round(rng.uniform(2, 150), 2)) for i in range(1, 31)]
    orders = [(i, rng.randint(1, 40), rng.choice(statuses), round(rng.uniform(5, 400), 2), rng.randint(1, 365))
              for i in range(1, 151)]
    items = [(i, rng.randint(1, 150), rng.randint(1, 30), rng.randint(1, 6), round(rng.uniform(1, 120), 2))
             for i in range(1, 301)]
    return {
        "customers": (["id", "name", "region", "segment", "signup_year"], customers),
        "products": (["id", "category", "brand", "list_price"], products),
        "orders": (["id", "customer_id", "status", "amount", "order_day"], orders),
        "items": (["id", "order_id", "product_id", "qty", "price"], items),
    }, SHOP_QUERIES


def flights(rng):
    alliances = ["star", "oneworld", "skyteam", "none"]
    countries = ["us", "de", "fr", "jp", "br"]
    airlines = [(i, f"air{i}", rng.choice(alliances)) for i in range(1, 9)]
    airports = [(i, f"ap{i:02d}", f"city{i:02d}", rng.choice(countries), rng.randint(1, 4)) for i in range(1, 21)]
    rows = []
    for i in range(1, 201):
        origin = rng.randint(1, 20)
        dest = rng.choice([a for a in range(1, 21) if a != origin])
        rows.append((i, rng.randint(1, 8), origin, dest, rng.randint(0, 23), rng.randint(150, 3000), rng.randint(-15, 120)))
    crew = [(i, rng.randint(1, 8), rng.choice(["pilot", "copilot", "purser", "attendant"]), rng.randint(0, 30))
            for i in range(1, 61)]
    return {
        "airlines": (["id", "name", "alliance"], airlines),
        "airports": (["id", "code", "city", "country", "hub_size"], airports),
        "flights": (["id", "airline_id", "origin_id", "dest_id", "dep_hour", "distance", "delay_min"], rows),
        "crew": (["id", "airline_id", "role", "years"], crew),
    }, FLIGHT_QUERIES


def school(rng):
    houses = ["lion", "raven", "badger", "snake"]
    depts = ["math", "art", "physics", "history", "biology"]
    students = [(i, f"stu{i:03d}", rng.choice(houses), rng.randint(2019, 2024)) for i in range(1, 51)]
    courses = [(i, rng.choice(depts), rng.randint(1, 5), rng.randint(1, 3)) for i in range(1, 21)]
    enrollments = [(i, rng.randint(1, 50), rng.randint(1, 20), rng.choice(["fall", "spring", "summer"]),
                    rng.randint(35, 100)) for i in range(1, 251)]
    rooms = [(i, rng.choice(["north", "south", "annex"]), rng.randint(10, 60)) for i in range(1, 13)]
    sessions = [(i, rng.randint(1, 20), rng.randint(1, 12), rng.randint(1, 5), rng.randint(8, 18)) for i in range(1, 61)]
    return {
        "students": (["id", "name", "house", "cohort"], students),
        "courses": (["id", "dept", "credits", "level"], courses),
        "enrollments": (["id", "student_id", "course_id", "term", "grade"], enrollments),
        "rooms": (["id", "building", "capacity"], rooms),
        "sessions": (["id", "course_id", "room_id", "weekday", "hour"], sessions),
    }, SCHOOL_QUERIES


def cell(v):
    return repr(v) if isinstance(v, float) else str(v)


def build(name, maker, seed, out):
    tables, queries = maker(random.Random(seed))
    queries = [q.strip() for q in queries.strip().splitlines() if q.strip()]
    d = out / name
    (d / "expected").mkdir(parents=True, exist_ok=True)
    db = sqlite3.connect(":memory:")
    for table, (cols, rows) in tables.items():
        with open(d / f"{table}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(cols)
            w.writerows([[cell(v) for v in r] for r in rows])
        db.execute(f"CREATE TABLE {table} ({', '.join(cols)})")
        db.executemany(f"INSERT INTO {table} VALUES ({', '.join('?' * len(cols))})", rows)
    (d / "queries.sql").write_text(f"-- {name}: one query per line\n" + "\n".join(queries) + "\n")
    for n, q in enumerate(queries, 1):
        cur = db.execute(q)
        with open(d / "expected" / f"q{n:02d}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([f"c{i}" for i in range(len(cur.description))])
            w.writerows([[cell(v) for v in r] for r in cur.fetchall()])
    print(f"{name}: {len(tables)} tables, {len(queries)} queries")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "tests" / "fixtures")
    args = ap.parse_args()
    build("shop", shop, 11, args.out)
    build("flights", flights, 23, args.out)
    build("school", school, 37, args.out)


if __name__ == "__main__":
    main()
