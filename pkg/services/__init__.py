# Laser phase plate services
