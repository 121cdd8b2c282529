fn main() {
    println!("tiltlab");
}
